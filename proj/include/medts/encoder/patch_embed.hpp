#pragma once

#include "medts/autograd/nn.hpp"
#include "medts/core/series.hpp"

#include <vector>

namespace medts::encoder {

/// N_p x patch_len matrix of the patches of one channel.
inline Matrix extract_patches(const Eigen::Ref<const Vector>& channel, const PatchGrid& grid) {
  if (channel.size() != grid.window) throw std::invalid_argument("channel length does not match patch grid");
  Matrix out(grid.n_patches, grid.patch_len);
  for (Index i = 0; i < grid.n_patches; ++i) out.row(i) = channel.segment(grid.offset(i), grid.patch_len).transpose();
  return out;
}

/// Shared linear patch embedding: one W_e, b_e for every channel and patch.
class PatchEmbedding {
 public:
  PatchEmbedding() = default;
  PatchEmbedding(ag::ParameterStore& store, Index patch_len, Index d_patch, std::mt19937_64& rng)
      : proj_(ag::Linear::create(store, "patch_embed", patch_len, d_patch, rng)) {}

  static PatchEmbedding bind(ag::ParameterStore& store) {
    PatchEmbedding e;
    e.proj_ = ag::Linear::bind(store, "patch_embed");
    return e;
  }

  Index patch_len() const { return proj_.in_features(); }
  Index d_patch() const { return proj_.out_features(); }

  /// One N_p x d_patch embedding per channel of the normalized window.
  std::vector<ag::Var> operator()(ag::Tape& t, const Matrix& normalized, const PatchGrid& grid) const {
    if (grid.patch_len != patch_len()) throw std::invalid_argument("patch length does not match embedding");
    if (normalized.rows() != grid.window) throw std::invalid_argument("window length does not match patch grid");
    std::vector<ag::Var> out;
    for (Index c = 0; c < normalized.cols(); ++c) {
      ag::Var patches = t.constant(extract_patches(normalized.col(c), grid));
      out.push_back(proj_(t, patches));
    }
    return out;
  }

  const ag::Linear& linear() const { return proj_; }

 private:
  ag::Linear proj_;
};

}  // namespace medts::encoder
