#include "hemoflow/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace hemoflow::checkpoint {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void spec_to_lines(std::map<std::string, std::string>& kv,
                   const std::string& prefix, const nn::NetworkSpec& spec) {
  kv[prefix + "arch"] =
      spec.kind == nn::ArchKind::kMlp ? "mlp" : "modified-mlp";
  kv[prefix + "input_dim"] = std::to_string(spec.input_dim);
  kv[prefix + "output_dim"] = std::to_string(spec.output_dim);
  kv[prefix + "hidden_layers"] = std::to_string(spec.hidden_layers);
  kv[prefix + "hidden_width"] = std::to_string(spec.hidden_width);
  kv[prefix + "init_seed"] = std::to_string(spec.init_seed);
  if (spec.fourier) {
    kv[prefix + "fourier_e"] = std::to_string(spec.fourier->e);
    kv[prefix + "fourier_sigma"] = fmt_double(spec.fourier->sigma);
  }
  if (spec.rwf) {
    kv[prefix + "rwf_mu"] = fmt_double(spec.rwf->mu);
    kv[prefix + "rwf_sigma"] = fmt_double(spec.rwf->sigma);
  }
}

const std::string& require(const std::map<std::string, std::string>& kv,
                           const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end())
    throw ValidationError("checkpoint: missing header key '" + key + "'");
  return it->second;
}

nn::NetworkSpec spec_from_lines(const std::map<std::string, std::string>& kv,
                                const std::string& prefix) {
  nn::NetworkSpec spec;
  const std::string arch = require(kv, prefix + "arch");
  if (arch == "mlp")
    spec.kind = nn::ArchKind::kMlp;
  else if (arch == "modified-mlp")
    spec.kind = nn::ArchKind::kModifiedMlp;
  else
    throw ValidationError("checkpoint: unknown arch '" + arch + "'");
  spec.input_dim = std::stoi(require(kv, prefix + "input_dim"));
  spec.output_dim = std::stoi(require(kv, prefix + "output_dim"));
  spec.hidden_layers = std::stoi(require(kv, prefix + "hidden_layers"));
  spec.hidden_width = std::stoi(require(kv, prefix + "hidden_width"));
  spec.init_seed = std::stoull(require(kv, prefix + "init_seed"));
  if (kv.count(prefix + "fourier_e")) {
    spec.fourier = nn::FourierOptions{
        std::stoi(require(kv, prefix + "fourier_e")),
        std::stod(require(kv, prefix + "fourier_sigma"))};
  }
  if (kv.count(prefix + "rwf_mu")) {
    spec.rwf = nn::RwfOptions{std::stod(require(kv, prefix + "rwf_mu")),
                              std::stod(require(kv, prefix + "rwf_sigma"))};
  }
  return spec;
}

std::string serialize_header(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> parse_header(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("checkpoint: malformed header line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_f64s(std::ostream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ValidationError("checkpoint: truncated file");
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ValidationError("checkpoint: truncated file");
  return v;
}
std::vector<double> read_f64s(std::istream& in, std::size_t n) {
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw ValidationError("checkpoint: truncated float block");
  return v;
}

void write_file(const std::string& path,
                const std::map<std::string, std::string>& kv,
                const std::vector<const std::vector<double>*>& param_blocks,
                const std::vector<const std::vector<double>*>& fourier_blocks,
                const AdamSnapshot* optimizer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("checkpoint: cannot open '" + path + "' for write");
  out.write("HFNN", 4);
  write_u32(out, kFormatVersion);
  const std::string header = serialize_header(kv);
  write_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::uint64_t count = 0;
  for (const auto* block : param_blocks) count += block->size();
  write_u64(out, count);
  for (const auto* block : param_blocks) write_f64s(out, *block);
  for (const auto* block : fourier_blocks) write_f64s(out, *block);
  if (optimizer) {
    if (optimizer->m.size() != count || optimizer->v.size() != count)
      throw UsageError("checkpoint: optimizer state size mismatch");
    write_u64(out, optimizer->step);
    double lrm = optimizer->lr_multiplier;
    out.write(reinterpret_cast<const char*>(&lrm), sizeof lrm);
    write_f64s(out, optimizer->m);
    write_f64s(out, optimizer->v);
  }
  if (!out) throw ConfigError("checkpoint: write to '" + path + "' failed");
}

struct RawFile {
  std::map<std::string, std::string> kv;
  std::ifstream in;
};

RawFile open_and_parse(const std::string& path) {
  RawFile raw;
  raw.in.open(path, std::ios::binary);
  if (!raw.in) throw ConfigError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  raw.in.read(magic, 4);
  if (!raw.in || std::memcmp(magic, "HFNN", 4) != 0)
    throw ValidationError("checkpoint: bad magic (not an HFNN file)");
  const std::uint32_t version = read_u32(raw.in);
  if (version != kFormatVersion)
    throw ValidationError("checkpoint: unsupported format version " +
                          std::to_string(version));
  const std::uint32_t hlen = read_u32(raw.in);
  std::string header(hlen, '\0');
  raw.in.read(header.data(), hlen);
  if (!raw.in) throw ValidationError("checkpoint: truncated header");
  raw.kv = parse_header(header);
  return raw;
}

std::optional<AdamSnapshot> read_optimizer(
    const std::map<std::string, std::string>& kv, std::istream& in,
    std::size_t count) {
  auto it = kv.find("optimizer");
  if (it == kv.end() || it->second == "none") return std::nullopt;
  if (it->second != "adam")
    throw ValidationError("checkpoint: unknown optimizer '" + it->second + "'");
  AdamSnapshot snap;
  snap.step = read_u64(in);
  in.read(reinterpret_cast<char*>(&snap.lr_multiplier),
          sizeof snap.lr_multiplier);
  if (!in) throw ValidationError("checkpoint: truncated optimizer state");
  snap.m = read_f64s(in, count);
  snap.v = read_f64s(in, count);
  return snap;
}

}  // namespace

void save_network(const std::string& path, const nn::ParamStore& params,
                  const AdamSnapshot* optimizer) {
  std::map<std::string, std::string> kv;
  kv["kind"] = "network";
  kv["optimizer"] = optimizer ? "adam" : "none";
  spec_to_lines(kv, "", params.spec());
  write_file(path, kv, {&params.values()}, {&params.fourier_b()}, optimizer);
}

NetworkCheckpoint load_network(const std::string& path) {
  RawFile raw = open_and_parse(path);
  if (require(raw.kv, "kind") != "network")
    throw ValidationError("checkpoint: expected a network checkpoint");
  const nn::NetworkSpec spec = spec_from_lines(raw.kv, "");
  const std::uint64_t count = read_u64(raw.in);
  if (count != spec.param_count())
    throw ValidationError("checkpoint: parameter count disagrees with spec");
  std::vector<double> values = read_f64s(raw.in, count);
  std::vector<double> fourier;
  if (spec.fourier)
    fourier = read_f64s(raw.in, static_cast<std::size_t>(spec.fourier->e) *
                                    spec.input_dim);
  NetworkCheckpoint ckpt;
  ckpt.params =
      nn::ParamStore::assemble(spec, std::move(values), std::move(fourier));
  ckpt.optimizer = read_optimizer(raw.kv, raw.in, count);
  return ckpt;
}

void save_operator(const std::string& path,
                   const operators::OperatorParams& params,
                   const AdamSnapshot* optimizer) {
  std::map<std::string, std::string> kv;
  kv["kind"] = "operator";
  kv["optimizer"] = optimizer ? "adam" : "none";
  kv["q"] = std::to_string(params.spec.q);
  std::string part;
  for (const auto& p : params.spec.partition) {
    if (!part.empty()) part += ";";
    part += p.name + ":" + std::to_string(p.lo) + ":" + std::to_string(p.hi);
  }
  kv["partition"] = part;
  spec_to_lines(kv, "branch1.", params.spec.branch1);
  spec_to_lines(kv, "branch2.", params.spec.branch2);
  spec_to_lines(kv, "trunk.", params.spec.trunk);
  write_file(path, kv,
             {&params.branch1.values(), &params.branch2.values(),
              &params.trunk.values()},
             {&params.branch1.fourier_b(), &params.branch2.fourier_b(),
              &params.trunk.fourier_b()},
             optimizer);
}

OperatorCheckpoint load_operator(const std::string& path) {
  RawFile raw = open_and_parse(path);
  if (require(raw.kv, "kind") != "operator")
    throw ValidationError("checkpoint: expected an operator checkpoint");
  operators::OperatorSpec spec;
  spec.q = std::stoi(require(raw.kv, "q"));
  spec.branch1 = spec_from_lines(raw.kv, "branch1.");
  spec.branch2 = spec_from_lines(raw.kv, "branch2.");
  spec.trunk = spec_from_lines(raw.kv, "trunk.");
  {
    std::stringstream ss(require(raw.kv, "partition"));
    std::string piece;
    while (std::getline(ss, piece, ';')) {
      const auto c1 = piece.find(':');
      const auto c2 = piece.find(':', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos)
        throw ValidationError("checkpoint: malformed partition entry");
      spec.partition.push_back({piece.substr(0, c1),
                                std::stoi(piece.substr(c1 + 1, c2 - c1 - 1)),
                                std::stoi(piece.substr(c2 + 1))});
    }
  }
  spec.validate();

  const std::uint64_t count = read_u64(raw.in);
  const std::size_t n1 = spec.branch1.param_count();
  const std::size_t n2 = spec.branch2.param_count();
  const std::size_t nt = spec.trunk.param_count();
  if (count != n1 + n2 + nt)
    throw ValidationError("checkpoint: parameter count disagrees with spec");
  std::vector<double> v1 = read_f64s(raw.in, n1);
  std::vector<double> v2 = read_f64s(raw.in, n2);
  std::vector<double> vt = read_f64s(raw.in, nt);
  auto read_fourier = [&](const nn::NetworkSpec& s) {
    return s.fourier ? read_f64s(raw.in, static_cast<std::size_t>(
                                             s.fourier->e) *
                                             s.input_dim)
                     : std::vector<double>{};
  };
  std::vector<double> b1 = read_fourier(spec.branch1);
  std::vector<double> b2 = read_fourier(spec.branch2);
  std::vector<double> bt = read_fourier(spec.trunk);

  OperatorCheckpoint ckpt;
  ckpt.params.spec = spec;
  ckpt.params.branch1 =
      nn::ParamStore::assemble(spec.branch1, std::move(v1), std::move(b1));
  ckpt.params.branch2 =
      nn::ParamStore::assemble(spec.branch2, std::move(v2), std::move(b2));
  ckpt.params.trunk =
      nn::ParamStore::assemble(spec.trunk, std::move(vt), std::move(bt));
  ckpt.optimizer = read_optimizer(raw.kv, raw.in, count);
  return ckpt;
}

Kind peek_kind(const std::string& path) {
  RawFile raw = open_and_parse(path);
  const std::string& kind = require(raw.kv, "kind");
  if (kind == "network") return Kind::kNetwork;
  if (kind == "operator") return Kind::kOperator;
  throw ValidationError("checkpoint: unknown kind '" + kind + "'");
}

}  // namespace hemoflow::checkpoint
