#pragma once

// Frozen decoder-only transformer (GPT-2 layout: pre-LN blocks, learned
// absolute positions, tanh-GELU MLP, final LayerNorm). Weights are never
// trainable; gradients flow through activations only.

#include "medts/autograd/nn.hpp"
#include "medts/backbone/safetensors.hpp"
#include "medts/backbone/tokenizer.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace medts::backbone {

struct BackboneConfig {
  Index vocab = 256;
  Index n_ctx = 1024;
  Index d_model = 16;
  Index n_layers = 2;
  Index n_heads = 2;
  double ln_eps = 1e-5;
};

/// Per-layer keys and values of a text prefix, reusable across every window of a record.
struct PrefixCache {
  Index n = 0;
  std::vector<Matrix> keys, values;  // one n x d_model matrix per layer
};

struct TextEmbedding {
  std::vector<int> tokens;
  Matrix embeddings;  // n_text x d_model
  Index n_text() const { return static_cast<Index>(tokens.size()); }
};

class FrozenBackbone {
 public:
  /// Randomly initialized frozen transformer with a byte tokenizer.
  static FrozenBackbone toy(BackboneConfig cfg, std::uint64_t seed, double init_std = 0.02) {
    auto tok = std::make_shared<ByteTokenizer>();
    cfg.vocab = tok->vocab_size();
    std::mt19937_64 rng(seed);
    auto st = std::make_shared<State>();
    st->cfg = cfg;
    st->tokenizer = tok;
    auto& P = st->params;
    const Index d = cfg.d_model;
    P.add("wte", ag::normal_init(cfg.vocab, d, init_std, rng), false);
    P.add("wpe", ag::normal_init(cfg.n_ctx, d, init_std / 2, rng), false);
    const double proj_std = init_std / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    for (Index l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "h." + std::to_string(l) + ".";
      P.add(p + "ln_1.weight", Matrix::Ones(1, d), false);
      P.add(p + "ln_1.bias", Matrix::Zero(1, d), false);
      P.add(p + "attn.c_attn.weight", ag::normal_init(3 * d, d, init_std, rng), false);
      P.add(p + "attn.c_attn.bias", Matrix::Zero(1, 3 * d), false);
      P.add(p + "attn.c_proj.weight", ag::normal_init(d, d, proj_std, rng), false);
      P.add(p + "attn.c_proj.bias", Matrix::Zero(1, d), false);
      P.add(p + "ln_2.weight", Matrix::Ones(1, d), false);
      P.add(p + "ln_2.bias", Matrix::Zero(1, d), false);
      P.add(p + "mlp.c_fc.weight", ag::normal_init(4 * d, d, init_std, rng), false);
      P.add(p + "mlp.c_fc.bias", Matrix::Zero(1, 4 * d), false);
      P.add(p + "mlp.c_proj.weight", ag::normal_init(d, 4 * d, proj_std, rng), false);
      P.add(p + "mlp.c_proj.bias", Matrix::Zero(1, d), false);
    }
    P.add("ln_f.weight", Matrix::Ones(1, d), false);
    P.add("ln_f.bias", Matrix::Zero(1, d), false);
    st->finalize();
    return FrozenBackbone(std::move(st));
  }

  /// Loads a GPT-2 style checkpoint directory: config.json, model.safetensors and
  /// either vocab.json + merges.txt or `"tokenizer": "byte"` in config.json.
  static FrozenBackbone from_pretrained(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    std::ifstream cf(root / "config.json");
    if (!cf) throw std::runtime_error("missing config.json in " + dir);
    const auto j = nlohmann::json::parse(cf);
    BackboneConfig cfg;
    cfg.vocab = j.value("vocab_size", Index{50257});
    cfg.n_ctx = j.value("n_positions", j.value("n_ctx", Index{1024}));
    cfg.d_model = j.value("n_embd", Index{768});
    cfg.n_layers = j.value("n_layer", Index{12});
    cfg.n_heads = j.value("n_head", Index{12});
    cfg.ln_eps = j.value("layer_norm_epsilon", 1e-5);
    std::shared_ptr<Tokenizer> tok;
    if (j.value("tokenizer", std::string{}) == "byte") {
      tok = std::make_shared<ByteTokenizer>();
    } else {
      tok = std::make_shared<BpeTokenizer>(
          BpeTokenizer::from_files((root / "vocab.json").string(), (root / "merges.txt").string()));
    }
    if (tok->vocab_size() > cfg.vocab) throw std::runtime_error("tokenizer vocabulary exceeds embedding table");
    auto tensors = read_safetensors((root / "model.safetensors").string());
    return from_tensors(cfg, std::move(tok), tensors);
  }

  /// GPT-2 tensor naming; Conv1D weights are stored in x out and transposed here.
  static FrozenBackbone from_tensors(const BackboneConfig& cfg, std::shared_ptr<Tokenizer> tok,
                                     const std::map<std::string, NamedTensor>& tensors) {
    auto st = std::make_shared<State>();
    st->cfg = cfg;
    st->tokenizer = std::move(tok);
    auto get = [&](const std::string& name) -> Matrix {
      auto it = tensors.find(name);
      if (it == tensors.end()) it = tensors.find("transformer." + name);
      if (it == tensors.end()) throw std::runtime_error("checkpoint lacks tensor " + name);
      return it->second.as_matrix();
    };
    auto expect = [](const Matrix& m, Index r, Index c, const std::string& name) {
      if (m.rows() != r || m.cols() != c) throw std::runtime_error("unexpected shape for " + name);
      return m;
    };
    const Index d = cfg.d_model;
    auto& P = st->params;
    P.add("wte", expect(get("wte.weight"), cfg.vocab, d, "wte"), false);
    P.add("wpe", expect(get("wpe.weight"), cfg.n_ctx, d, "wpe"), false);
    for (Index l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "h." + std::to_string(l) + ".";
      for (const char* ln : {"ln_1", "ln_2"}) {
        P.add(p + ln + ".weight", expect(get(p + ln + ".weight"), 1, d, ln), false);
        P.add(p + ln + ".bias", expect(get(p + ln + ".bias"), 1, d, ln), false);
      }
      const std::pair<const char*, std::pair<Index, Index>> convs[] = {
          {"attn.c_attn", {d, 3 * d}}, {"attn.c_proj", {d, d}}, {"mlp.c_fc", {d, 4 * d}}, {"mlp.c_proj", {4 * d, d}}};
      for (const auto& [name, io] : convs) {
        const std::string key = p + name;
        P.add(key + ".weight", expect(get(key + ".weight"), io.first, io.second, key).transpose(), false);
        P.add(key + ".bias", expect(get(key + ".bias"), 1, io.second, key), false);
      }
    }
    P.add("ln_f.weight", expect(get("ln_f.weight"), 1, d, "ln_f"), false);
    P.add("ln_f.bias", expect(get("ln_f.bias"), 1, d, "ln_f"), false);
    st->finalize();
    return FrozenBackbone(std::move(st));
  }

  /// Inverse of from_pretrained for byte-tokenized backbones.
  void save_pretrained(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::map<std::string, NamedTensor> tensors;
    for (const auto& [name, p] : st_->params) {
      Matrix m = p.value;
      const bool conv = name.find("c_attn.weight") != std::string::npos || name.find("c_proj.weight") != std::string::npos ||
                        name.find("c_fc.weight") != std::string::npos;
      if (conv) m = Matrix(m.transpose());
      std::string key = name;
      if (name == "wte" || name == "wpe") key += ".weight";
      NamedTensor t;
      const bool vector_like = name.find(".bias") != std::string::npos || name.find("ln_") != std::string::npos;
      t.shape = vector_like ? std::vector<Index>{m.cols()} : std::vector<Index>{m.rows(), m.cols()};
      t.data.assign(m.data(), m.data() + m.size());
      tensors.emplace(key, std::move(t));
    }
    write_safetensors((fs::path(dir) / "model.safetensors").string(), tensors, true);
    nlohmann::json cfg = {{"vocab_size", st_->cfg.vocab}, {"n_positions", st_->cfg.n_ctx},
                          {"n_embd", st_->cfg.d_model},   {"n_layer", st_->cfg.n_layers},
                          {"n_head", st_->cfg.n_heads},   {"layer_norm_epsilon", st_->cfg.ln_eps},
                          {"tokenizer", "byte"}};
    std::ofstream(fs::path(dir) / "config.json") << cfg.dump(2) << '\n';
  }

  const BackboneConfig& config() const { return st_->cfg; }
  Index d_model() const { return st_->cfg.d_model; }
  Index max_context() const { return st_->cfg.n_ctx; }
  const Tokenizer& tokenizer() const { return *st_->tokenizer; }
  const ag::ParameterStore& parameters() const { return st_->params; }

  /// d_model x vocab, the layout the prototype reduction consumes.
  const Matrix& embedding_table_t() const { return st_->wte_t; }
  const Matrix& embedding_table() const { return st_->params.at("wte").value; }

  /// Token rows of the frozen embedding table. `patch_budget` positions are reserved for patches.
  TextEmbedding embed_text(std::string_view prompt, Index patch_budget = 0) const {
    TextEmbedding out;
    out.tokens = st_->tokenizer->encode(prompt);
    const Index n = out.n_text();
    if (n + patch_budget > st_->cfg.n_ctx) {
      throw std::length_error("prompt of " + std::to_string(n) + " tokens exceeds context budget of " +
                              std::to_string(st_->cfg.n_ctx - patch_budget));
    }
    const Matrix& wte = embedding_table();
    out.embeddings.resize(n, st_->cfg.d_model);
    for (Index i = 0; i < n; ++i) {
      const int id = out.tokens[static_cast<std::size_t>(i)];
      if (id < 0 || id >= wte.rows()) throw std::out_of_range("token id outside embedding table");
      out.embeddings.row(i) = wte.row(id);
    }
    return out;
  }

  /// Causal forward pass; output length equals input length.
  ag::Var forward(ag::Tape& t, const ag::Var& inputs) const { return run(t, inputs, nullptr, nullptr); }

  /// Runs the text prefix once; its outputs never depend on later positions under the causal mask.
  PrefixCache prefix_cache(const Matrix& text_embeddings) const {
    const auto& cfg = st_->cfg;
    PrefixCache c;
    c.n = text_embeddings.rows();
    if (c.n == 0) return c;
    ag::Tape t;
    t.set_grad_enabled(false);
    const ag::Var out = run(t, t.constant_ref(text_embeddings), nullptr, &c);
    (void)out;
    if (static_cast<Index>(c.keys.size()) != cfg.n_layers) throw std::logic_error("prefix cache incomplete");
    return c;
  }

  /// Outputs for `inputs` placed after a cached prefix; equal to the trailing rows of the full forward pass.
  ag::Var forward_suffix(ag::Tape& t, const PrefixCache& prefix, const ag::Var& inputs) const {
    if (prefix.n == 0) return forward(t, inputs);
    return run(t, inputs, &prefix, nullptr);
  }

  /// SHA-256 over parameter names, shapes and values.
  std::string checksum() const {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (const auto& [name, p] : st_->params) {
      EVP_DigestUpdate(ctx, name.data(), name.size());
      const Index dims[2] = {p.value.rows(), p.value.cols()};
      EVP_DigestUpdate(ctx, dims, sizeof(dims));
      EVP_DigestUpdate(ctx, p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
  }

 private:
  struct State {
    BackboneConfig cfg;
    std::shared_ptr<Tokenizer> tokenizer;
    ag::ParameterStore params;
    Matrix wte_t;
    void finalize() {
      if (cfg.d_model % cfg.n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
      wte_t = params.at("wte").value.transpose();
    }
  };

  // With `prefix`, positions start after the cached rows and attention also covers them.
  // With `record`, per-layer keys and values are stored for later suffix passes.
  ag::Var run(ag::Tape& t, const ag::Var& inputs, const PrefixCache* prefix, PrefixCache* record) const {
    const auto& cfg = st_->cfg;
    const Index n = inputs.rows();
    const Index off = prefix ? prefix->n : 0;
    if (inputs.cols() != cfg.d_model) throw std::invalid_argument("input width does not match backbone d_model");
    if (off + n > cfg.n_ctx) {
      throw std::length_error("sequence of " + std::to_string(off + n) + " exceeds context " + std::to_string(cfg.n_ctx));
    }
    const auto& P = st_->params;
    auto cref = [&](const std::string& name) { return t.constant_ref(P.at(name).value); };
    auto lin = [&](const ag::Var& x, const std::string& name) {
      return ag::add_row(ag::matmul_nt(x, cref(name + ".weight")), cref(name + ".bias"));
    };
    auto ln = [&](const ag::Var& x, const std::string& name) {
      return ag::layernorm_rows(x, cref(name + ".weight"), cref(name + ".bias"), cfg.ln_eps);
    };
    const Index d = cfg.d_model, dh = d / cfg.n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    ag::Var h = ag::add(inputs, t.constant(P.at("wpe").value.middleRows(off, n)));
    for (Index l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "h." + std::to_string(l) + ".";
      ag::Var qkv = lin(ln(h, p + "ln_1"), p + "attn.c_attn");
      if (record) {
        record->keys.push_back(qkv.value().middleCols(d, d));
        record->values.push_back(qkv.value().middleCols(2 * d, d));
      }
      std::vector<ag::Var> heads;
      for (Index k = 0; k < cfg.n_heads; ++k) {
        ag::Var q = ag::slice_cols(qkv, k * dh, dh);
        ag::Var key = ag::slice_cols(qkv, d + k * dh, dh);
        ag::Var v = ag::slice_cols(qkv, 2 * d + k * dh, dh);
        if (prefix) {
          const auto li = static_cast<std::size_t>(l);
          key = ag::concat_rows({t.constant(prefix->keys[li].middleCols(k * dh, dh)), key});
          v = ag::concat_rows({t.constant(prefix->values[li].middleCols(k * dh, dh)), v});
        }
        // Causal masking is offset by the prefix length when keys outnumber queries.
        ag::Var att = ag::softmax_rows(ag::scale(ag::matmul_nt(q, key), inv_sqrt), /*causal=*/true);
        heads.push_back(ag::matmul(att, v));
      }
      h = ag::add(h, lin(heads.size() == 1 ? heads.front() : ag::concat_cols(heads), p + "attn.c_proj"));
      ag::Var m = lin(ag::gelu(lin(ln(h, p + "ln_2"), p + "mlp.c_fc")), p + "mlp.c_proj");
      h = ag::add(h, m);
    }
    return ln(h, "ln_f");
  }

  explicit FrozenBackbone(std::shared_ptr<const State> st) : st_(std::move(st)) {}
  std::shared_ptr<const State> st_;
};

/// Rows n_text .. end of the backbone output.
inline ag::Var extract_patch_outputs(const ag::Var& outputs, Index n_text) {
  if (n_text < 0 || n_text > outputs.rows()) throw std::invalid_argument("inconsistent text length for extraction");
  if (n_text == 0) return outputs;
  return ag::slice_rows(outputs, n_text, outputs.rows() - n_text);
}

}  // namespace medts::backbone
