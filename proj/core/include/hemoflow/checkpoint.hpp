#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hemoflow/nn.hpp"
#include "hemoflow/operators.hpp"

namespace hemoflow::checkpoint {

// Binary layout, little-endian:
//   magic "HFNN" | u32 format version | u32 header length | header bytes
//   (UTF-8 key=value lines describing the spec and optional optimizer)
//   | u64 parameter count | f64 parameters in layout order
//   | frozen Fourier matrices where the spec has them
//   | optimizer state when present: u64 step count, f64 lr multiplier,
//     f64 first moments, f64 second moments.
// Round-trips bit-exactly.

inline constexpr std::uint32_t kFormatVersion = 1;

struct AdamSnapshot {
  std::uint64_t step = 0;
  double lr_multiplier = 1.0;  // halved once by the divergence guard
  std::vector<double> m, v;
};

struct NetworkCheckpoint {
  nn::ParamStore params;
  std::optional<AdamSnapshot> optimizer;
};

struct OperatorCheckpoint {
  operators::OperatorParams params;
  std::optional<AdamSnapshot> optimizer;
};

enum class Kind { kNetwork, kOperator };

void save_network(const std::string& path, const nn::ParamStore& params,
                  const AdamSnapshot* optimizer = nullptr);
NetworkCheckpoint load_network(const std::string& path);

void save_operator(const std::string& path,
                   const operators::OperatorParams& params,
                   const AdamSnapshot* optimizer = nullptr);
OperatorCheckpoint load_operator(const std::string& path);

Kind peek_kind(const std::string& path);

}  // namespace hemoflow::checkpoint
