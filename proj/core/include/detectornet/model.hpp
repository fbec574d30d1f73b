#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "detectornet/blocks.hpp"
#include "detectornet/graph.hpp"
#include "detectornet/param_store.hpp"
#include "detectornet/spatial_gcn.hpp"
#include "detectornet/temporal_attention.hpp"

namespace dnet {

class Rng;

/// Component switches matching the four "w/o" model variants.
struct Ablation {
  bool without_mta = false;  // no multi-view branch
  bool without_gta = false;  // no global attention branch
  bool without_da = false;   // no dynamic adjacency term
  bool without_sa = false;   // no static P_f / P_b terms

  bool any() const { return without_mta || without_gta || without_da || without_sa; }
  /// Enables one flag by name ("without_mta", ...). ConfigError on unknown names.
  void enable(std::string_view flag);
  std::vector<std::string> enabled_flags() const;
  bool operator==(const Ablation&) const = default;
};

struct ModelConfig {
  std::size_t nodes = 0;
  std::size_t input_len = 12;   // P
  std::size_t output_len = 12;  // Q
  std::size_t input_dim = 2;    // D: value + time of day
  std::size_t hidden = 32;      // C
  std::size_t layers = 2;       // L
  std::size_t diffusion_steps = 2;  // K
  std::size_t embed_dim = 10;   // d_e of the adaptive adjacency
  std::size_t ffn_factor = 2;   // FFN hidden width = ffn_factor * C
  std::size_t predictor_hidden = 64;
  std::size_t output_dim = 1;   // c_p
  double dropout = 0.3;
  bool learnable_fusion = false;  // beta/gamma trainable
  double beta = 1.0;
  double gamma = 1.0;
  Ablation ablation;
  std::uint64_t seed = 42;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
  /// True when parameters of `other` can be loaded into a model built from
  /// this config (same architecture; dropout/seed may differ).
  bool same_architecture(const ModelConfig& other) const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Scalar weight count of a model built from `config`:
///
///   input      D*C + C
///   per layer  temporal:  9*C*C (views, unless w/o MTA) + 3*C*C (global, unless w/o GTA)
///                         + C*C (W_res) + [beta] + [gamma] + ffn + 2C
///              spatial:   2*(K+1)*C*C (unless w/o SA)
///                         + (K+1)*C*C + 2*N*d_e + 2*N*N + 2*P*C*C (unless w/o DA)
///                         + ffn + 2C
///   ffn        2*C*H + H + C with H = ffn_factor*C
///   predictor  C_ST*M + M + M*c_p + c_p with C_ST = C*P/Q, M = predictor_hidden
///
/// beta/gamma are only counted when learnable (beta also needs the global
/// branch).
std::size_t parameter_count(const ModelConfig& config);

/// Pointwise channel lift [..., D] -> [..., C].
Tensor input_projection(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct PredictorParams {
  Tensor w1;  // [C_ST, M]
  Tensor b1;
  Tensor w2;  // [M, c_p]
  Tensor b2;
};

/// Regroups [..., N, P, C] into [..., N, Q, C*P/Q] and applies two pointwise
/// convolutions with a ReLU between them.
Tensor predictor_head(const Tensor& x, const PredictorParams& params, std::size_t output_len);

struct MaskedLoss {
  Tensor value;
  std::size_t count = 0;
  /// Set when no entry was masked in; `value` is then 0.
  bool empty_mask = false;
};

/// Mean |pred - truth| over entries where `mask` is nonzero.
MaskedLoss masked_mae_loss(const Tensor& pred, const Tensor& truth, const Tensor& mask);

/// Input projection, L x (temporal attention -> dynamic spatial GCN), predictor.
class DetectorNet {
 public:
  /// Validates the config and initializes every parameter from `config.seed`.
  DetectorNet(ModelConfig config, DetectorGraph graph);

  DetectorNet(DetectorNet&&) = default;
  DetectorNet& operator=(DetectorNet&&) = default;
  DetectorNet(const DetectorNet&) = delete;
  DetectorNet& operator=(const DetectorNet&) = delete;

  /// window: [N, P, D] or [B, N, P, D] -> [N, Q, c_p] or [B, N, Q, c_p].
  /// Train mode applies dropout with `rng`.
  Tensor forward(const Tensor& window, Mode mode, Rng* rng = nullptr) const;

  const ModelConfig& config() const { return config_; }
  const DetectorGraph& graph() const { return graph_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Copies values from named tensors (e.g. a checkpoint). Every parameter
  /// must be present with the same shape; FormatError otherwise.
  void load_parameters(const std::vector<std::pair<std::string, Tensor>>& named);

 private:
  ModelConfig config_;
  DetectorGraph graph_;
  ParamStore store_;
  Tensor input_weight_;
  Tensor input_bias_;
  std::vector<MtamParams> temporal_;
  std::vector<DsgcnParams> spatial_;
  PredictorParams predictor_;
};

}  // namespace dnet
