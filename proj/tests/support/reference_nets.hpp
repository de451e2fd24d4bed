#pragma once

#include <cmath>
#include <vector>

#include "hemoflow/nn.hpp"

// Plain-loop re-evaluation of the network architectures, written directly
// against the parameter layout and never touching the tape. Serves as the
// independent oracle for forward-pass values.
namespace testsupport {

inline std::vector<double> reference_affine(
    const hemoflow::nn::ParamStore& store, hemoflow::nn::BlockKind block,
    int layer, const std::vector<double>& acts) {
  using hemoflow::nn::TensorRole;
  const bool rwf = store.spec().rwf.has_value();
  const auto& bias = store.entry(block, layer, TensorRole::kBias);
  const auto& w = store.entry(
      block, layer, rwf ? TensorRole::kDirection : TensorRole::kWeight);
  std::vector<double> out(w.rows);
  for (int r = 0; r < w.rows; ++r) {
    double acc = 0.0;
    for (int c = 0; c < w.cols; ++c)
      acc += store.values()[w.offset + static_cast<std::size_t>(r) * w.cols +
                            c] *
             acts[c];
    if (rwf) {
      const auto& s = store.entry(block, layer, TensorRole::kScale);
      acc *= store.values()[s.offset + r];
    }
    out[r] = acc + store.values()[bias.offset + r];
  }
  return out;
}

inline std::vector<double> reference_forward(
    const hemoflow::nn::ParamStore& store, const std::vector<double>& x) {
  using hemoflow::nn::ArchKind;
  using hemoflow::nn::BlockKind;
  const auto& spec = store.spec();

  std::vector<double> acts;
  if (spec.fourier) {
    acts = hemoflow::nn::fourier_embed(x, store.fourier_b(), spec.fourier->e,
                                       spec.input_dim);
  } else {
    acts = x;
  }

  auto tanh_all = [](std::vector<double> v) {
    for (double& e : v) e = std::tanh(e);
    return v;
  };

  if (spec.kind == ArchKind::kMlp) {
    for (int l = 0; l < spec.hidden_layers; ++l)
      acts = tanh_all(reference_affine(store, BlockKind::kHidden, l, acts));
  } else {
    const std::vector<double> enc_u =
        tanh_all(reference_affine(store, BlockKind::kEncoderU, 0, acts));
    const std::vector<double> enc_v =
        tanh_all(reference_affine(store, BlockKind::kEncoderV, 0, acts));
    for (int l = 0; l < spec.hidden_layers; ++l) {
      const std::vector<double> gate =
          tanh_all(reference_affine(store, BlockKind::kHidden, l, acts));
      std::vector<double> merged(gate.size());
      for (std::size_t r = 0; r < gate.size(); ++r)
        merged[r] = gate[r] * enc_u[r] + (1.0 - gate[r]) * enc_v[r];
      acts = std::move(merged);
    }
  }
  return reference_affine(store, BlockKind::kOutput, 0, acts);
}

}  // namespace testsupport
