#include "detectornet/model.hpp"

#include "detectornet/error.hpp"
#include "detectornet/ops.hpp"
#include "detectornet/random.hpp"

namespace dnet {

namespace {

constexpr std::string_view kFlagNames[] = {"without_mta", "without_gta", "without_da", "without_sa"};

std::size_t ffn_count(std::size_t c, std::size_t h) { return 2 * c * h + h + c; }

}  // namespace

void Ablation::enable(std::string_view flag) {
  if (flag == "without_mta") {
    without_mta = true;
  } else if (flag == "without_gta") {
    without_gta = true;
  } else if (flag == "without_da") {
    without_da = true;
  } else if (flag == "without_sa") {
    without_sa = true;
  } else {
    throw ConfigError("unknown ablation flag '" + std::string(flag) +
                      "' (expected without_mta, without_gta, without_da or without_sa)");
  }
}

std::vector<std::string> Ablation::enabled_flags() const {
  std::vector<std::string> out;
  const bool flags[] = {without_mta, without_gta, without_da, without_sa};
  for (std::size_t i = 0; i < 4; ++i) {
    if (flags[i]) out.emplace_back(kFlagNames[i]);
  }
  return out;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(nodes, "nodes");
  positive(input_len, "input_len");
  positive(output_len, "output_len");
  positive(input_dim, "input_dim");
  positive(hidden, "hidden");
  positive(layers, "layers");
  positive(embed_dim, "embed_dim");
  positive(ffn_factor, "ffn_factor");
  positive(predictor_hidden, "predictor_hidden");
  positive(output_dim, "output_dim");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (ablation.without_mta && ablation.without_gta) {
    throw ConfigError("without_mta and without_gta together remove the whole temporal path");
  }
  if (ablation.without_da && ablation.without_sa) {
    throw ConfigError("without_da and without_sa together remove every diffusion term");
  }
  if (!ablation.without_mta && input_len % 3 != 0) {
    throw ConfigError("input_len must be a multiple of 3 for the multi-view split, got " + std::to_string(input_len));
  }
  if ((hidden * input_len) % output_len != 0) {
    throw ConfigError("hidden * input_len (" + std::to_string(hidden * input_len) +
                      ") must be divisible by output_len (" + std::to_string(output_len) + ")");
  }
}

bool ModelConfig::same_architecture(const ModelConfig& o) const {
  return nodes == o.nodes && input_len == o.input_len && output_len == o.output_len && input_dim == o.input_dim &&
         hidden == o.hidden && layers == o.layers && diffusion_steps == o.diffusion_steps &&
         embed_dim == o.embed_dim && ffn_factor == o.ffn_factor && predictor_hidden == o.predictor_hidden &&
         output_dim == o.output_dim && learnable_fusion == o.learnable_fusion && ablation == o.ablation;
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{
      {"nodes", nodes},
      {"input_len", input_len},
      {"output_len", output_len},
      {"input_dim", input_dim},
      {"hidden", hidden},
      {"layers", layers},
      {"diffusion_steps", diffusion_steps},
      {"embed_dim", embed_dim},
      {"ffn_factor", ffn_factor},
      {"predictor_hidden", predictor_hidden},
      {"output_dim", output_dim},
      {"dropout", dropout},
      {"learnable_fusion", learnable_fusion},
      {"beta", beta},
      {"gamma", gamma},
      {"ablation", ablation.enabled_flags()},
      {"seed", seed},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.nodes = j.at("nodes").get<std::size_t>();
    c.input_len = j.at("input_len").get<std::size_t>();
    c.output_len = j.at("output_len").get<std::size_t>();
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.diffusion_steps = j.at("diffusion_steps").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.ffn_factor = j.at("ffn_factor").get<std::size_t>();
    c.predictor_hidden = j.at("predictor_hidden").get<std::size_t>();
    c.output_dim = j.at("output_dim").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.learnable_fusion = j.at("learnable_fusion").get<bool>();
    c.beta = j.at("beta").get<double>();
    c.gamma = j.at("gamma").get<double>();
    for (const auto& flag : j.at("ablation")) c.ablation.enable(flag.get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid model config: ") + e.what());
  }
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t c = cfg.hidden;
  const std::size_t h = cfg.ffn_factor * c;
  const std::size_t terms = cfg.diffusion_steps + 1;
  std::size_t total = cfg.input_dim * c + c;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    if (!cfg.ablation.without_mta) total += 9 * c * c;
    if (!cfg.ablation.without_gta) total += 3 * c * c;
    total += c * c;
    if (cfg.learnable_fusion) total += (cfg.ablation.without_gta ? 0 : 1) + 1;
    total += ffn_count(c, h) + 2 * c;

    if (!cfg.ablation.without_sa) total += 2 * terms * c * c;
    if (!cfg.ablation.without_da) {
      total += terms * c * c + 2 * cfg.nodes * cfg.embed_dim + 2 * cfg.nodes * cfg.nodes +
               2 * cfg.input_len * c * c;
    }
    total += ffn_count(c, h) + 2 * c;
  }
  const std::size_t c_st = c * cfg.input_len / cfg.output_len;
  total += c_st * cfg.predictor_hidden + cfg.predictor_hidden + cfg.predictor_hidden * cfg.output_dim +
           cfg.output_dim;
  return total;
}

Tensor input_projection(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() == 0 || weight.rank() != 2 || x.dim(-1) != weight.dim(0)) {
    throw DimensionError("input projection expects feature width " +
                         (weight.rank() == 2 ? std::to_string(weight.dim(0)) : std::string("?")) + ", got input " +
                         shape_to_string(x.shape()));
  }
  return linear(x, weight, bias);
}

Tensor predictor_head(const Tensor& x, const PredictorParams& params, std::size_t output_len) {
  if (x.rank() < 3) throw DimensionError("predictor expects [..., N, P, C], got " + shape_to_string(x.shape()));
  const std::size_t p = x.dim(-2);
  const std::size_t c = x.dim(-1);
  if (output_len == 0 || (p * c) % output_len != 0) {
    throw ConfigError("predictor cannot regroup " + std::to_string(p) + "x" + std::to_string(c) + " into " +
                      std::to_string(output_len) + " horizons");
  }
  Shape grouped(x.shape().begin(), x.shape().end() - 2);
  grouped.push_back(output_len);
  grouped.push_back(p * c / output_len);
  Tensor h = relu(linear(reshape(x, grouped), params.w1, params.b1));
  return linear(h, params.w2, params.b2);
}

MaskedLoss masked_mae_loss(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
  if (pred.shape() != truth.shape() || pred.shape() != mask.shape()) {
    throw DimensionError("masked MAE operands differ in shape: pred " + shape_to_string(pred.shape()) + ", truth " +
                         shape_to_string(truth.shape()) + ", mask " + shape_to_string(mask.shape()));
  }
  std::size_t count = 0;
  for (double m : mask.values()) count += m != 0.0 ? 1 : 0;
  Tensor masked = sum(mul(abs(sub(pred, truth)), mask));
  if (count == 0) return MaskedLoss{scale(masked, 0.0), 0, true};
  return MaskedLoss{scale(masked, 1.0 / static_cast<double>(count)), count, false};
}

// DetectorNet ---------------------------------------------------------------

DetectorNet::DetectorNet(ModelConfig config, DetectorGraph graph)
    : config_(std::move(config)), graph_(std::move(graph)), store_(config_.seed) {
  config_.validate();
  if (graph_.n_nodes != config_.nodes) {
    throw ConfigError("config has " + std::to_string(config_.nodes) + " nodes but the graph has " +
                      std::to_string(graph_.n_nodes));
  }
  Rng rng(config_.seed);
  const std::size_t c = config_.hidden;
  const std::size_t h = config_.ffn_factor * c;
  const std::size_t n = config_.nodes;
  auto matrix = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    return store_.add(name, xavier_uniform(rows, cols, rng));
  };
  auto filled = [&](const std::string& name, Shape shape, double value) {
    return store_.add(name, Tensor(std::move(shape), value));
  };
  auto ffn = [&](const std::string& prefix) {
    FeedForwardParams f;
    f.w1 = matrix(prefix + ".ffn.w1", c, h);
    f.b1 = filled(prefix + ".ffn.b1", {h}, 0.0);
    f.w2 = matrix(prefix + ".ffn.w2", h, c);
    f.b2 = filled(prefix + ".ffn.b2", {c}, 0.0);
    return f;
  };
  auto norm = [&](const std::string& prefix) {
    return LayerNormParams{filled(prefix + ".norm.gain", {c}, 1.0), filled(prefix + ".norm.bias", {c}, 0.0)};
  };
  auto projection = [&](const std::string& prefix) {
    return AttentionProjection{matrix(prefix + ".wq", c, c), matrix(prefix + ".wk", c, c), matrix(prefix + ".wv", c, c)};
  };

  input_weight_ = matrix("input.weight", config_.input_dim, c);
  input_bias_ = filled("input.bias", {c}, 0.0);

  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string t = "layer" + std::to_string(l) + ".temporal";
    MtamParams mt;
    if (!config_.ablation.without_mta) {
      mt.views = std::array<AttentionProjection, 3>{projection(t + ".long"), projection(t + ".medium"),
                                                    projection(t + ".short")};
    }
    if (!config_.ablation.without_gta) mt.global = projection(t + ".global");
    mt.residual = matrix(t + ".residual", c, c);
    if (config_.learnable_fusion) {
      mt.beta = config_.ablation.without_gta ? Tensor::scalar(config_.beta) : filled(t + ".beta", {}, config_.beta);
      mt.gamma = filled(t + ".gamma", {}, config_.gamma);
    } else {
      mt.beta = Tensor::scalar(config_.beta);
      mt.gamma = Tensor::scalar(config_.gamma);
    }
    mt.ffn = ffn(t);
    mt.norm = norm(t);
    temporal_.push_back(std::move(mt));

    const std::string s = "layer" + std::to_string(l) + ".spatial";
    DsgcnParams sp;
    sp.order = config_.diffusion_steps;
    for (std::size_t k = 0; k <= config_.diffusion_steps; ++k) {
      const std::string kk = s + ".k" + std::to_string(k);
      if (!config_.ablation.without_sa) {
        sp.forward.push_back(matrix(kk + ".forward", c, c));
        sp.backward.push_back(matrix(kk + ".backward", c, c));
      }
      if (!config_.ablation.without_da) sp.dynamic.push_back(matrix(kk + ".dynamic", c, c));
    }
    if (!config_.ablation.without_da) {
      DynamicAdjacencyParams adj;
      adj.e1 = store_.add(s + ".adjacency.e1", scaled_normal({n, config_.embed_dim}, 0.1, rng));
      adj.e2 = store_.add(s + ".adjacency.e2", scaled_normal({n, config_.embed_dim}, 0.1, rng));
      adj.w_att = filled(s + ".adjacency.w_att", {n, n}, 1.0);
      adj.w_adp = filled(s + ".adjacency.w_adp", {n, n}, 1.0);
      adj.query = matrix(s + ".adjacency.query", config_.input_len * c, c);
      adj.key = matrix(s + ".adjacency.key", config_.input_len * c, c);
      sp.adjacency = std::move(adj);
    }
    sp.ffn = ffn(s);
    sp.norm = norm(s);
    spatial_.push_back(std::move(sp));
  }

  const std::size_t c_st = c * config_.input_len / config_.output_len;
  predictor_.w1 = matrix("predictor.w1", c_st, config_.predictor_hidden);
  predictor_.b1 = filled("predictor.b1", {config_.predictor_hidden}, 0.0);
  predictor_.w2 = matrix("predictor.w2", config_.predictor_hidden, config_.output_dim);
  predictor_.b2 = filled("predictor.b2", {config_.output_dim}, 0.0);
}

Tensor DetectorNet::forward(const Tensor& window, Mode mode, Rng* rng) const {
  const bool single = window.rank() == 3;
  if (!single && window.rank() != 4) {
    throw DimensionError("window must be [N, P, D] or [B, N, P, D], got " + shape_to_string(window.shape()));
  }
  if (window.dim(-3) != config_.nodes || window.dim(-2) != config_.input_len || window.dim(-1) != config_.input_dim) {
    throw DimensionError("window " + shape_to_string(window.shape()) + " does not match config (N=" +
                         std::to_string(config_.nodes) + ", P=" + std::to_string(config_.input_len) +
                         ", D=" + std::to_string(config_.input_dim) + ")");
  }
  ForwardContext ctx{mode, config_.dropout, rng};
  Tensor x = input_projection(window, input_weight_, input_bias_);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    try {
      x = mtam_forward(x, temporal_[l], ctx);
      x = dsgcn_forward(x, graph_, spatial_[l], ctx);
    } catch (const Error& e) {
      e.rethrow_with_context("layer " + std::to_string(l));
    }
  }
  return predictor_head(x, predictor_, config_.output_len);
}

void DetectorNet::load_parameters(const std::vector<std::pair<std::string, Tensor>>& named) {
  if (named.size() != store_.size()) {
    throw FormatError("expected " + std::to_string(store_.size()) + " parameters, got " + std::to_string(named.size()));
  }
  for (const auto& [name, value] : named) {
    if (!store_.contains(name)) throw FormatError("unexpected parameter '" + name + "'");
    Tensor target = store_.get(name);
    if (target.shape() != value.shape()) {
      throw FormatError("parameter '" + name + "' has shape " + shape_to_string(value.shape()) + ", expected " +
                        shape_to_string(target.shape()));
    }
    auto dst = target.mutable_values();
    const auto src = value.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace dnet
