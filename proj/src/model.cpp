#include "hass/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hass/params_io.hpp"
#include "hass/rng.hpp"

namespace hass {

namespace {

Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                      RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(std::move(shape));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
  return w;
}

const Tensor& head_weight(const ClassifierParams& head, const std::string& name) {
  auto it = head.weights.find(name);
  if (it == head.weights.end()) throw ConfigError("classifier head is missing tensor '" + name + "'");
  return it->second;
}

}  // namespace

void ClassifierParams::validate(std::size_t channels, std::size_t timesteps,
                                std::size_t depth) const {
  const std::size_t flat = channels * timesteps * depth;
  if (kind == HeadKind::Linear) {
    const Tensor& w = head_weight(*this, "w");
    const Tensor& b = head_weight(*this, "b");
    if (w.rank() != 2 || w.extent(0) != kStageCount || w.extent(1) != flat ||
        b.size() != kStageCount) {
      throw ShapeError("linear head " + w.shape_str() + " does not match input of " +
                       std::to_string(flat) + " features");
    }
    return;
  }
  const Tensor& cw = head_weight(*this, "conv.w");
  const Tensor& cb = head_weight(*this, "conv.b");
  const Tensor& fw = head_weight(*this, "fc.w");
  const Tensor& fb = head_weight(*this, "fc.b");
  const std::size_t t_flat = timesteps * depth;
  if (cw.rank() != 3 || cw.extent(0) != kTinyConvFilters || cw.extent(1) != channels ||
      cw.extent(2) < 1 || cw.extent(2) > t_flat) {
    throw ShapeError("tinyconv kernel " + cw.shape_str() + " does not fit " +
                     std::to_string(channels) + " channels x " + std::to_string(t_flat) +
                     " steps");
  }
  if (cb.size() != kTinyConvFilters || fw.rank() != 2 || fw.extent(0) != kStageCount ||
      fw.extent(1) != kTinyConvFilters || fb.size() != kStageCount) {
    throw ShapeError("tinyconv head tensors malformed: conv.b " + cb.shape_str() + ", fc.w " +
                     fw.shape_str() + ", fc.b " + fb.shape_str());
  }
}

ClassifierParams init_head(HeadKind kind, std::size_t channels, std::size_t timesteps,
                           std::size_t depth, std::uint64_t seed) {
  if (channels == 0 || timesteps == 0 || depth == 0) {
    throw ConfigError("head config: all extents must be >= 1");
  }
  RngStream rng(seed);
  ClassifierParams head;
  head.kind = kind;
  const std::size_t flat = channels * timesteps * depth;
  if (kind == HeadKind::Linear) {
    head.weights["w"] = glorot_uniform({kStageCount, flat}, flat, kStageCount, rng);
    head.weights["b"] = Tensor({kStageCount});
  } else {
    const std::size_t t_flat = timesteps * depth;
    if (kTinyConvKernel > t_flat) {
      throw ConfigError("tinyconv head needs at least " + std::to_string(kTinyConvKernel) +
                        " time steps, got " + std::to_string(t_flat));
    }
    head.weights["conv.w"] =
        glorot_uniform({kTinyConvFilters, channels, kTinyConvKernel}, channels * kTinyConvKernel,
                       kTinyConvFilters * kTinyConvKernel, rng);
    head.weights["conv.b"] = Tensor({kTinyConvFilters});
    head.weights["fc.w"] = glorot_uniform({kStageCount, kTinyConvFilters}, kTinyConvFilters,
                                          kStageCount, rng);
    head.weights["fc.b"] = Tensor({kStageCount});
  }
  head.validate(channels, timesteps, depth);
  return head;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch size must be >= 1");
  if (learning_rate < 0.0 || !std::isfinite(learning_rate)) {
    throw ConfigError("train: learning rate must be finite and >= 0");
  }
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
    throw ConfigError("train: adam betas must lie in [0, 1)");
  }
  if (adam_eps <= 0.0) throw ConfigError("train: adam eps must be > 0");
}

HeadVars bind_head(Tape& tape, ClassifierParams& head, std::vector<ParamBinding>& bindings,
                   const std::string& name_prefix) {
  HeadVars vars;
  for (auto& [name, tensor] : head.weights) {
    Var v = tape.leaf(tensor);
    bindings.push_back(ParamBinding{name_prefix + name, &tensor, v});
    vars.vars[name] = v;
  }
  return vars;
}

Var classify_on_tape(Tape& tape, Var input, const EncoderVars* encoder, const HeadVars& head,
                     HeadKind kind) {
  Var rep = encoder ? encode(tape, input, *encoder) : input;
  const Tensor& shape = tape.value(rep);
  if (shape.rank() != 3) {
    throw ShapeError("classify: expected a C x T x D representation, got " + shape.shape_str());
  }
  const std::size_t c = shape.extent(0), t = shape.extent(1), d = shape.extent(2);
  auto var_of = [&](const char* name) {
    auto it = head.vars.find(name);
    if (it == head.vars.end()) throw ConfigError("classifier head is missing tensor '" +
                                                 std::string(name) + "'");
    return it->second;
  };
  if (kind == HeadKind::Linear) {
    Var flat = tape.reshape(rep, {c * t * d, 1});
    Var z = tape.add_bias_broadcast(tape.matmul(var_of("w"), flat), var_of("b"));
    return tape.transpose(z);  // 1 x 5
  }
  Var x2 = tape.reshape(rep, {c, t * d});
  Var conv = tape.relu(tape.conv1d_time(x2, var_of("conv.w"), var_of("conv.b")));
  Var pooled = tape.reshape(tape.mean_cols(conv), {kTinyConvFilters, 1});
  Var z = tape.add_bias_broadcast(tape.matmul(var_of("fc.w"), pooled), var_of("fc.b"));
  return tape.transpose(z);
}

namespace {

// Forward + loss graph for one mini-batch. Parameters are bound once; every
// record shares the same leafs.
Var build_batch_loss(Tape& tape, const std::vector<const EpochRecord*>& batch,
                     HassEncoderParams* encoder, ClassifierParams& head,
                     std::vector<ParamBinding>& bindings, Var* logits_out) {
  std::optional<EncoderVars> enc_vars;
  if (encoder) enc_vars = bind_encoder(tape, *encoder, bindings);
  HeadVars head_vars = bind_head(tape, head, bindings);
  std::vector<Var> rows;
  std::vector<std::size_t> labels;
  rows.reserve(batch.size());
  for (const EpochRecord* rec : batch) {
    Var input = tape.leaf(rec->signal);
    rows.push_back(classify_on_tape(tape, input, enc_vars ? &*enc_vars : nullptr, head_vars,
                                    head.kind));
    labels.push_back(static_cast<std::size_t>(rec->label));
  }
  Var logits = rows.size() == 1 ? rows[0] : tape.vstack(rows);
  if (logits_out) *logits_out = logits;
  return tape.cross_entropy_rows(logits, std::move(labels));
}

void check_dataset_shapes(const std::vector<EpochRecord>& dataset,
                          const HassEncoderParams* encoder, const ClassifierParams& head) {
  if (dataset.empty()) throw ConfigError("dataset is empty");
  const Tensor& first = dataset.front().signal;
  if (first.rank() != 3) {
    throw ShapeError("dataset records must be C x T x D, got " + first.shape_str());
  }
  const std::size_t c = first.extent(0), t = first.extent(1), d = first.extent(2);
  for (const EpochRecord& r : dataset) {
    if (!r.signal.same_shape(first)) {
      throw ShapeError("dataset records disagree on shape: " + first.shape_str() + " vs " +
                       r.signal.shape_str());
    }
  }
  if (encoder) {
    encoder->validate();
    if (encoder->channels != c || encoder->timesteps != t || encoder->depth != d) {
      throw ShapeError("encoder expects " + std::to_string(encoder->channels) + "x" +
                       std::to_string(encoder->timesteps) + "x" +
                       std::to_string(encoder->depth) + " but records are " + first.shape_str());
    }
  }
  head.validate(c, t, d);
}

struct Optimizer {
  const TrainConfig& cfg;
  std::vector<std::vector<double>> m, v;
  std::size_t step_count = 0;

  explicit Optimizer(const TrainConfig& c) : cfg(c) {}

  void step(Tape& tape, std::vector<ParamBinding>& bindings) {
    if (cfg.optimizer == OptimizerKind::Adam && m.empty()) {
      m.resize(bindings.size());
      v.resize(bindings.size());
      for (std::size_t i = 0; i < bindings.size(); ++i) {
        m[i].assign(bindings[i].tensor->size(), 0.0);
        v[i].assign(bindings[i].tensor->size(), 0.0);
      }
    }
    ++step_count;
    for (std::size_t i = 0; i < bindings.size(); ++i) {
      Tensor& p = *bindings[i].tensor;
      const Tensor& g = tape.grad(bindings[i].var);
      if (cfg.optimizer == OptimizerKind::Sgd) {
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= cfg.learning_rate * g[j];
        continue;
      }
      const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
      const double corr1 = 1.0 - std::pow(b1, static_cast<double>(step_count));
      const double corr2 = 1.0 - std::pow(b2, static_cast<double>(step_count));
      std::vector<double>& mi = m[i];
      std::vector<double>& vi = v[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        mi[j] = b1 * mi[j] + (1.0 - b1) * g[j];
        vi[j] = b2 * vi[j] + (1.0 - b2) * g[j] * g[j];
        const double m_hat = mi[j] / corr1;
        const double v_hat = vi[j] / corr2;
        p[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
      }
    }
  }
};

}  // namespace

Tensor forward_classify(const Tensor& input, const HassEncoderParams* encoder,
                        const ClassifierParams& head) {
  if (input.rank() != 3) {
    throw ShapeError("forward_classify: expected C x T x D input, got " + input.shape_str());
  }
  head.validate(input.extent(0), input.extent(1), input.extent(2));
  Tape tape;
  std::optional<EncoderVars> enc_vars;
  if (encoder) enc_vars = bind_encoder(tape, *encoder);
  HeadVars head_vars;
  for (const auto& [name, tensor] : head.weights) head_vars.vars[name] = tape.leaf(tensor);
  Var logits = classify_on_tape(tape, tape.leaf(input), enc_vars ? &*enc_vars : nullptr,
                                head_vars, head.kind);
  const Tensor& row = tape.value(logits);  // 1 x 5
  return Tensor({kStageCount}, std::vector<double>(row.storage()));
}

double cross_entropy_loss(const Tensor& logits, const std::vector<SleepStage>& labels) {
  if (labels.empty()) throw ConfigError("cross_entropy_loss: empty batch");
  if (logits.rank() != 2 || logits.extent(1) != kStageCount ||
      logits.extent(0) != labels.size()) {
    throw ShapeError("cross_entropy_loss: logits " + logits.shape_str() + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  double loss = 0.0;
  const std::size_t b = labels.size();
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = logits.data() + i * kStageCount;
    double m = row[0];
    for (std::size_t j = 1; j < kStageCount; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < kStageCount; ++j) denom += std::exp(row[j] - m);
    loss += m + std::log(denom) - row[static_cast<std::size_t>(labels[i])];
  }
  return loss / static_cast<double>(b);
}

SleepStage argmax_stage(const double* logits, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j) {
    if (logits[j] > logits[best]) best = j;  // ties keep the lower stage code
  }
  return static_cast<SleepStage>(best);
}

TrainResult train(const std::vector<EpochRecord>& dataset, const TrainConfig& config,
                  HassEncoderParams* encoder, ClassifierParams& head) {
  config.validate();
  check_dataset_shapes(dataset, encoder, head);

  RngStream shuffle_rng = RngStream::derive(config.seed, "shuffle");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  Optimizer opt(config);
  TrainResult result;
  const std::size_t n = dataset.size();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      std::vector<const EpochRecord*> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&dataset[order[i]]);

      Tape tape;
      std::vector<ParamBinding> bindings;
      Var logits;
      Var loss = build_batch_loss(tape, batch, encoder, head, bindings, &logits);
      const double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss at epoch " << (epoch + 1) << ", batch "
            << (batch_index + 1);
        throw TrainDivergedError(epoch + 1, batch_index + 1, msg.str());
      }
      const Tensor& logit_rows = tape.value(logits);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (argmax_stage(logit_rows.data() + i * kStageCount) == batch[i]->label) ++correct;
      }
      loss_sum += loss_value * static_cast<double>(batch.size());

      tape.backward(loss);
      opt.step(tape, bindings);
    }
    result.trace.push_back(EpochStats{loss_sum / static_cast<double>(n),
                                      static_cast<double>(correct) / static_cast<double>(n)});
  }

  std::vector<SleepStage> preds = predict(dataset, encoder, head);
  result.final_train_accuracy = accuracy_against(dataset, preds);
  return result;
}

std::vector<SleepStage> predict(const std::vector<EpochRecord>& dataset,
                                const HassEncoderParams* encoder, const ClassifierParams& head) {
  check_dataset_shapes(dataset, encoder, head);
  std::vector<SleepStage> out;
  out.reserve(dataset.size());
  for (const EpochRecord& rec : dataset) {
    Tensor logits = forward_classify(rec.signal, encoder, head);
    out.push_back(argmax_stage(logits.data()));
  }
  return out;
}

double accuracy_against(const std::vector<EpochRecord>& dataset,
                        const std::vector<SleepStage>& predictions) {
  if (dataset.empty() || dataset.size() != predictions.size()) {
    throw ConfigError("accuracy: dataset and prediction lengths differ");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].label == predictions[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

StagingModel init_model(std::size_t channels, std::size_t timesteps, std::size_t depth,
                        bool use_hass, HeadKind head_kind, std::uint64_t seed,
                        std::size_t heads_intra, std::size_t heads_inter) {
  StagingModel model;
  model.channels = channels;
  model.timesteps = timesteps;
  model.depth = depth;
  if (use_hass) {
    EncoderConfig cfg;
    cfg.channels = channels;
    cfg.timesteps = timesteps;
    cfg.depth = depth;
    cfg.heads_intra = heads_intra;
    cfg.heads_inter = heads_inter;
    cfg.seed = derive_seed(seed, "init.enc");
    model.encoder = init_encoder(cfg);
  }
  model.head = init_head(head_kind, channels, timesteps, depth, derive_seed(seed, "init.head"));
  return model;
}

void save_model(const StagingModel& model, const std::string& path) {
  NamedTensors tensors;
  tensors.emplace_back("meta.schema",
                       Tensor({3}, {static_cast<double>(model.channels),
                                    static_cast<double>(model.timesteps),
                                    static_cast<double>(model.depth)}));
  tensors.emplace_back("meta.head_kind",
                       Tensor::scalar(model.head.kind == HeadKind::TinyConv ? 1.0 : 0.0));
  tensors.emplace_back("meta.use_hass", Tensor::scalar(model.encoder ? 1.0 : 0.0));
  if (model.encoder) {
    const HassEncoderParams& enc = *model.encoder;
    tensors.emplace_back("meta.heads",
                         Tensor({2}, {static_cast<double>(enc.intra.attn.head_count),
                                      static_cast<double>(enc.inter.attn.head_count)}));
    for_each_tensor(enc, [&](const std::string& name, const Tensor& t) {
      tensors.emplace_back("enc." + name, t);
    });
    tensors.emplace_back("enc.intra.ln1.eps", Tensor::scalar(enc.intra.ln1.eps));
    tensors.emplace_back("enc.intra.ln2.eps", Tensor::scalar(enc.intra.ln2.eps));
    tensors.emplace_back("enc.inter.ln1.eps", Tensor::scalar(enc.inter.ln1.eps));
    tensors.emplace_back("enc.inter.ln2.eps", Tensor::scalar(enc.inter.ln2.eps));
  }
  for (const auto& [name, t] : model.head.weights) {
    tensors.emplace_back("head." + name, t);
  }
  write_params_file(tensors, path);
}

namespace {

std::size_t meta_extent(double v, const char* what) {
  if (!(v >= 1.0) || v != std::floor(v) || v > 1e12) {
    throw ParamsError(ParamsError::Code::BadTensor,
                      std::string("model meta field ") + what + " is not a positive integer");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

StagingModel load_model(const std::string& path) {
  NamedTensors entries = read_params_file(path);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : entries) {
    if (!by_name.emplace(name, std::move(t)).second) {
      throw ParamsError(ParamsError::Code::BadTensor, "duplicate tensor '" + name + "'");
    }
  }
  auto take = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ParamsError(ParamsError::Code::BadTensor, "model file is missing tensor '" + name + "'");
    }
    Tensor t = std::move(it->second);
    by_name.erase(it);
    return t;
  };

  StagingModel model;
  const Tensor schema = take("meta.schema");
  if (schema.size() != 3) {
    throw ParamsError(ParamsError::Code::BadTensor, "meta.schema must hold C, T, D");
  }
  model.channels = meta_extent(schema[0], "C");
  model.timesteps = meta_extent(schema[1], "T");
  model.depth = meta_extent(schema[2], "D");
  const double head_kind = take("meta.head_kind")[0];
  const double use_hass = take("meta.use_hass")[0];
  model.head.kind = head_kind == 1.0 ? HeadKind::TinyConv : HeadKind::Linear;

  if (use_hass == 1.0) {
    const Tensor heads = take("meta.heads");
    if (heads.size() != 2) {
      throw ParamsError(ParamsError::Code::BadTensor, "meta.heads must hold two head counts");
    }
    HassEncoderParams enc;
    enc.channels = model.channels;
    enc.timesteps = model.timesteps;
    enc.depth = model.depth;
    enc.intra.attn.head_count = meta_extent(heads[0], "intra heads");
    enc.inter.attn.head_count = meta_extent(heads[1], "inter heads");
    enc.intra.attn.key_dim = enc.intra.attn.value_dim = enc.intra_embed_dim();
    enc.inter.attn.key_dim = enc.inter.attn.value_dim = enc.inter_embed_dim();
    enc.intra.attn.heads.resize(enc.intra.attn.head_count);
    enc.inter.attn.heads.resize(enc.inter.attn.head_count);
    for_each_tensor(enc, [&](const std::string& name, Tensor& t) { t = take("enc." + name); });
    enc.intra.ln1.eps = take("enc.intra.ln1.eps")[0];
    enc.intra.ln2.eps = take("enc.intra.ln2.eps")[0];
    enc.inter.ln1.eps = take("enc.inter.ln1.eps")[0];
    enc.inter.ln2.eps = take("enc.inter.ln2.eps")[0];
    try {
      enc.validate();
    } catch (const ShapeError& e) {
      throw ParamsError(ParamsError::Code::BadTensor,
                        std::string("model encoder tensors malformed: ") + e.what());
    }
    model.encoder = std::move(enc);
  }

  for (auto& [name, t] : by_name) {
    if (name.rfind("head.", 0) != 0) {
      throw ParamsError(ParamsError::Code::BadTensor, "unexpected tensor '" + name + "'");
    }
    model.head.weights[name.substr(5)] = std::move(t);
  }
  try {
    model.head.validate(model.channels, model.timesteps, model.depth);
  } catch (const std::runtime_error& e) {
    throw ParamsError(ParamsError::Code::BadTensor,
                      std::string("model head tensors malformed: ") + e.what());
  }
  return model;
}

double gradcheck_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradcheck_model(const GradCheckConfig& config) {
  EncoderConfig enc_cfg;
  enc_cfg.channels = config.channels;
  enc_cfg.timesteps = config.timesteps;
  enc_cfg.depth = config.depth;
  enc_cfg.heads_intra = config.heads;
  enc_cfg.heads_inter = config.heads;
  enc_cfg.seed = derive_seed(config.seed, "init.enc");
  HassEncoderParams encoder = init_encoder(enc_cfg);
  ClassifierParams head = init_head(HeadKind::Linear, config.channels, config.timesteps,
                                    config.depth, derive_seed(config.seed, "init.head"));

  RngStream input_rng = RngStream::derive(config.seed, "gradcheck.input");
  std::vector<EpochRecord> records(2);
  for (auto& rec : records) {
    rec.signal = Tensor({config.channels, config.timesteps, config.depth});
    for (std::size_t i = 0; i < rec.signal.size(); ++i) rec.signal[i] = input_rng.normal();
  }
  records[0].label = SleepStage::W;
  records[1].label = SleepStage::N2;
  std::vector<const EpochRecord*> batch{&records[0], &records[1]};

  auto loss_value = [&]() {
    Tape tape;
    std::vector<ParamBinding> bindings;
    Var loss = build_batch_loss(tape, batch, &encoder, head, bindings, nullptr);
    return tape.value(loss)[0];
  };

  // Analytic gradients.
  std::vector<std::string> names;
  std::vector<Tensor*> tensors;
  std::vector<Tensor> grads;
  {
    Tape tape;
    std::vector<ParamBinding> bindings;
    Var loss = build_batch_loss(tape, batch, &encoder, head, bindings, nullptr);
    tape.backward(loss);
    for (const ParamBinding& b : bindings) {
      names.push_back(b.name);
      tensors.push_back(b.tensor);
      grads.push_back(tape.grad(b.var));
    }
  }

  GradCheckResult result;
  const double h = config.step;
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    Tensor& param = *tensors[ti];
    for (std::size_t j = 0; j < param.size(); ++j) {
      const double saved = param[j];
      param[j] = saved + h;
      const double plus = loss_value();
      param[j] = saved - h;
      const double minus = loss_value();
      param[j] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double rel = gradcheck_rel_error(grads[ti][j], numeric);
      ++result.coordinates_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_tensor = names[ti];
        result.worst_index = j;
      }
    }
  }
  return result;
}

}  // namespace hass
