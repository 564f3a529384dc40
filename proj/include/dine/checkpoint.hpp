// Text checkpoints for SourceNet / TargetNet.
//
//   dine-checkpoint 1
//   arch <source|target> <input_dim> <bottleneck> <num_classes> <n_hidden> <h1> <h2> ...
//   seed <u64>
//   param <name> <rank> <d0> <d1> ... <hexfloat values...>
//   buffer <name> <len> <hexfloat values...>
//   end
//
// Values are written as C99 hex floats, so a round trip is bit-exact.
#pragma once

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "dine/nn.hpp"

namespace dine {

namespace checkpoint_detail {

inline std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw FormatError("checkpoint: bad number '" + tok + "'");
  return v;
}

inline void write_arch(std::ostream& os, const ArchDescriptor& a) {
  os << "arch " << (a.kind == ArchDescriptor::Kind::kSource ? "source" : "target") << ' ' << a.input_dim << ' '
     << a.bottleneck << ' ' << a.num_classes << ' ' << a.hidden.size();
  for (auto h : a.hidden) os << ' ' << h;
  os << '\n';
}

inline ArchDescriptor read_arch(std::istream& is) {
  std::string tag, kind;
  ArchDescriptor a;
  std::size_t n_hidden = 0;
  if (!(is >> tag >> kind >> a.input_dim >> a.bottleneck >> a.num_classes >> n_hidden) || tag != "arch")
    throw FormatError("checkpoint: missing arch line");
  if (kind == "source")
    a.kind = ArchDescriptor::Kind::kSource;
  else if (kind == "target")
    a.kind = ArchDescriptor::Kind::kTarget;
  else
    throw FormatError("checkpoint: unknown network kind '" + kind + "'");
  a.hidden.resize(n_hidden);
  for (auto& h : a.hidden)
    if (!(is >> h)) throw FormatError("checkpoint: truncated arch line");
  return a;
}

template <class Net>
std::vector<std::pair<std::string, std::vector<double>*>> buffers_of(Net& net) {
  if constexpr (requires { net.buffers(); })
    return net.buffers();
  else
    return {};
}

}  // namespace checkpoint_detail

template <class Net>
void save_checkpoint(std::ostream& os, const Net& net) {
  using namespace checkpoint_detail;
  os << "dine-checkpoint 1\n";
  write_arch(os, net.arch());
  os << "seed " << net.seed() << '\n';
  for (const Parameter* p : net.parameters()) {
    os << "param " << p->name << ' ' << p->value.rank();
    for (auto d : p->value.shape()) os << ' ' << d;
    for (double v : p->value.values()) os << ' ' << hex(v);
    os << '\n';
  }
  for (auto& [name, buf] : buffers_of(const_cast<Net&>(net))) {
    os << "buffer " << name << ' ' << buf->size();
    for (double v : *buf) os << ' ' << hex(v);
    os << '\n';
  }
  os << "end\n";
}

template <class Net>
void save_checkpoint(const std::string& path, const Net& net) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write checkpoint " + path);
  save_checkpoint(os, net);
}

/// Reads the architecture line only, to decide which net type to load.
inline ArchDescriptor peek_arch(const std::string& path) {
  std::ifstream is(path);
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "dine-checkpoint" || version != 1)
    throw FormatError("not a dine checkpoint: " + path);
  return checkpoint_detail::read_arch(is);
}

template <class Net>
Net load_checkpoint(std::istream& is) {
  using namespace checkpoint_detail;
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "dine-checkpoint" || version != 1)
    throw FormatError("checkpoint: bad header");
  ArchDescriptor arch = read_arch(is);
  std::string tag;
  std::uint64_t seed = 0;
  if (!(is >> tag >> seed) || tag != "seed") throw FormatError("checkpoint: missing seed");
  Net net(arch, seed);
  if (net.arch().kind != arch.kind) throw FormatError("checkpoint: network kind mismatch");
  auto params = net.parameters();
  auto buffers = buffers_of(net);
  std::size_t next_param = 0;
  while (is >> tag) {
    if (tag == "end") {
      if (next_param != params.size()) throw FormatError("checkpoint: missing parameters");
      return net;
    }
    std::string name, tok;
    is >> name;
    if (tag == "param") {
      if (next_param >= params.size() || params[next_param]->name != name)
        throw FormatError("checkpoint: unexpected parameter '" + name + "'");
      Parameter& p = *params[next_param++];
      std::size_t rank = 0;
      is >> rank;
      Shape shape(rank);
      for (auto& d : shape) is >> d;
      if (shape != p.value.shape()) throw FormatError("checkpoint: shape mismatch for '" + name + "'");
      for (double& v : p.value.values()) {
        if (!(is >> tok)) throw FormatError("checkpoint: truncated parameter '" + name + "'");
        v = parse_double(tok);
      }
    } else if (tag == "buffer") {
      std::size_t len = 0;
      is >> len;
      auto it = std::find_if(buffers.begin(), buffers.end(), [&](auto& b) { return b.first == name; });
      if (it == buffers.end() || it->second->size() != len)
        throw FormatError("checkpoint: unexpected buffer '" + name + "'");
      for (double& v : *it->second) {
        if (!(is >> tok)) throw FormatError("checkpoint: truncated buffer '" + name + "'");
        v = parse_double(tok);
      }
    } else {
      throw FormatError("checkpoint: unknown record '" + tag + "'");
    }
  }
  throw FormatError("checkpoint: missing end marker");
}

template <class Net>
Net load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  return load_checkpoint<Net>(is);
}

}  // namespace dine
