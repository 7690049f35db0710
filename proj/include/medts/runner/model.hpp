#pragma once

#include "medts/backbone/backbone.hpp"
#include "medts/core/task_kind.hpp"
#include "medts/encoder/covariate.hpp"
#include "medts/encoder/patch_embed.hpp"
#include "medts/encoder/reprogrammer.hpp"
#include "medts/encoder/revin.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace medts::runner {

/// Shapes of the trainable heads around the frozen backbone.
struct ModelShape {
  TaskKind task = TaskKind::semseg;
  Index window = 256;
  Index patch_len = 16;
  Index stride = 8;
  Index d_patch = 32;
  Index n_proto = 32;
  Index n_heads = 4;
  Index d_head = 8;
  Index n_cov = 1;
  Index n_out = 1;  // K
  encoder::CovariateStrategy strategy = encoder::CovariateStrategy::concatenate;

  PatchGrid grid() const { return patch_indices(window, patch_len, stride); }

  /// Backbone positions per fused sequence (the independent strategy runs C_cov such sequences).
  Index n_patch_positions() const {
    const Index np = grid().n_patches;
    return strategy == encoder::CovariateStrategy::interleave ? np * n_cov : np;
  }

  nlohmann::json to_json() const {
    return {{"task", to_string(task)},       {"window", window}, {"patch_len", patch_len}, {"stride", stride},
            {"d_patch", d_patch},            {"n_proto", n_proto}, {"n_heads", n_heads},   {"d_head", d_head},
            {"n_cov", n_cov},                {"n_out", n_out},   {"covariate_strategy", encoder::to_string(strategy)}};
  }

  static ModelShape from_json(const nlohmann::json& j) {
    ModelShape s;
    s.task = parse_task(j.at("task").get<std::string>());
    s.window = j.at("window").get<Index>();
    s.patch_len = j.at("patch_len").get<Index>();
    s.stride = j.at("stride").get<Index>();
    s.d_patch = j.at("d_patch").get<Index>();
    s.n_proto = j.at("n_proto").get<Index>();
    s.n_heads = j.at("n_heads").get<Index>();
    s.d_head = j.at("d_head").get<Index>();
    s.n_cov = j.at("n_cov").get<Index>();
    s.n_out = j.at("n_out").get<Index>();
    s.strategy = encoder::parse_strategy(j.at("covariate_strategy").get<std::string>());
    return s;
  }

  bool operator==(const ModelShape&) const = default;
};

/// Output of one window's forward pass.
struct WindowOutput {
  ag::Var raw;  // N_t x K
  encoder::RevinState revin;
  Matrix normalized;  // N_t x C_cov input after normalization
  Index n_text = 0;
  Index n_patch = 0;  // backbone positions per fused sequence
  Index n_sequences = 1;
  std::vector<ag::Var> sequence_outputs;  // one N_t x K map per fused sequence, averaged into `raw`
  Index seq_len() const { return n_text + n_patch; }
};

/// Patch embedding, reprogrammer, covariate fusion and projection head over a frozen backbone.
class MedTsModel {
 public:
  MedTsModel(ModelShape shape, std::shared_ptr<const backbone::FrozenBackbone> bb, std::uint64_t seed)
      : shape_(shape), bb_(std::move(bb)) {
    validate();
    std::mt19937_64 rng(seed);
    const Index d_model = bb_->d_model();
    embed_ = encoder::PatchEmbedding(store_, shape_.patch_len, shape_.d_patch, rng);
    rep_ = encoder::Reprogrammer(store_, reprogrammer_config(), rng);
    if (shape_.strategy == encoder::CovariateStrategy::average_weighted) weights_ = encoder::CovariateWeights(store_, shape_.n_cov);
    head_ = ag::Linear::create(store_, "head", shape_.n_patch_positions() * d_model, shape_.window * shape_.n_out, rng);
  }

  const ModelShape& shape() const { return shape_; }
  const backbone::FrozenBackbone& backbone() const { return *bb_; }
  ag::ParameterStore& parameters() { return store_; }
  const ag::ParameterStore& parameters() const { return store_; }

  WindowOutput forward(ag::Tape& t, const Eigen::Ref<const Matrix>& window, const backbone::PrefixCache& prefix) const {
    if (window.rows() != shape_.window || window.cols() != shape_.n_cov) {
      throw std::invalid_argument("window of " + std::to_string(window.rows()) + "x" + std::to_string(window.cols()) +
                                  " does not match model shape " + std::to_string(shape_.window) + "x" +
                                  std::to_string(shape_.n_cov));
    }
    WindowOutput out;
    auto [normalized, st] = encoder::revin_normalize(window);
    out.revin = st;
    out.normalized = std::move(normalized);
    const auto grid = shape_.grid();
    const auto per_cov = embed_(t, out.normalized, grid);
    const ag::Var protos = rep_.prototypes(t, bb_->embedding_table_t());

    encoder::FusedSequences fused;
    if (shape_.strategy == encoder::CovariateStrategy::concatenate) {
      fused.sequences = {rep_.attend(t, encoder::concatenate_covariates(per_cov), protos)};
    } else {
      std::vector<ag::Var> aligned;
      for (const auto& e : per_cov) aligned.push_back(rep_.attend(t, e, protos));
      ag::Var w;
      if (shape_.strategy == encoder::CovariateStrategy::average_weighted) w = weights_(t);
      fused = encoder::fuse_covariates(aligned, shape_.strategy, &w);
    }

    out.n_text = prefix.n;
    out.n_patch = fused.n_patch_positions();
    out.n_sequences = static_cast<Index>(fused.sequences.size());
    auto& raws = out.sequence_outputs;
    for (const auto& seq : fused.sequences) {
      // The text prefix runs once per record; only the patch positions are recomputed here.
      const ag::Var hidden = bb_->forward_suffix(t, prefix, seq);
      const ag::Var flat = ag::reshape(hidden, 1, hidden.rows() * hidden.cols());
      raws.push_back(ag::reshape(head_(t, flat), shape_.window, shape_.n_out));
    }
    out.raw = raws.size() == 1 ? raws.front() : ag::mean_of(raws);
    return out;
  }

  /// Reconstruction in input units for the anomaly task.
  static Matrix denormalize(const Matrix& raw, const encoder::RevinState& st) { return encoder::revin_denormalize(raw, st); }

 private:
  encoder::ReprogrammerConfig reprogrammer_config() const {
    return {.d_in = encoder::reprogrammer_input_width(shape_.strategy, shape_.d_patch, shape_.n_cov),
            .d_model = bb_->d_model(),
            .vocab = bb_->embedding_table_t().cols(),
            .n_proto = shape_.n_proto,
            .n_heads = shape_.n_heads,
            .d_head = shape_.d_head};
  }

  void validate() const {
    if (!bb_) throw std::invalid_argument("model needs a backbone");
    if (shape_.n_cov < 1) throw std::invalid_argument("model needs at least one covariate");
    if (shape_.n_out < 1) throw std::invalid_argument("model needs at least one output column");
    if (shape_.d_patch < 1) throw std::invalid_argument("patch embedding width must be positive");
    if (shape_.task == TaskKind::anomaly && shape_.n_out != shape_.n_cov) {
      throw std::invalid_argument("anomaly reconstruction needs one output per covariate");
    }
    if (shape_.task == TaskKind::boundary && shape_.n_out != 1) throw std::invalid_argument("boundary head has one output");
    (void)shape_.grid();
  }

  ModelShape shape_;
  std::shared_ptr<const backbone::FrozenBackbone> bb_;
  ag::ParameterStore store_;
  encoder::PatchEmbedding embed_;
  encoder::Reprogrammer rep_;
  encoder::CovariateWeights weights_;
  ag::Linear head_;
};

}  // namespace medts::runner
