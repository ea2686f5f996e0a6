#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hass/dataset.hpp"
#include "hass/encoder.hpp"
#include "hass/tensor.hpp"

namespace hass {

enum class HeadKind { Linear, TinyConv };

// Classification head mapping a C x T x D representation to five logits.
// Linear: flatten + dense. TinyConv: 1-D convolution over time (8 filters,
// kernel 5), global average pool, dense.
struct ClassifierParams {
  HeadKind kind = HeadKind::Linear;
  // Ordered so parameter enumeration is deterministic.
  std::map<std::string, Tensor> weights;

  void validate(std::size_t channels, std::size_t timesteps, std::size_t depth) const;
};

inline constexpr std::size_t kTinyConvFilters = 8;
inline constexpr std::size_t kTinyConvKernel = 5;

ClassifierParams init_head(HeadKind kind, std::size_t channels, std::size_t timesteps,
                           std::size_t depth, std::uint64_t seed);

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  double loss = 0.0;      // mean batch loss over the epoch
  double accuracy = 0.0;  // running accuracy against pre-update parameters
};

struct TrainResult {
  std::vector<EpochStats> trace;
  double final_train_accuracy = 0.0;  // full post-training pass
};

struct HeadVars {
  std::map<std::string, Var> vars;
};

HeadVars bind_head(Tape& tape, ClassifierParams& head, std::vector<ParamBinding>& bindings,
                   const std::string& name_prefix = "head.");

// Logits var (shape {1 x 5}) for one record on the tape; encodes first when
// an encoder is bound.
Var classify_on_tape(Tape& tape, Var input, const EncoderVars* encoder, const HeadVars& head,
                     HeadKind kind);

// Tensor-level single-record forward: length-5 logits.
Tensor forward_classify(const Tensor& input, const HassEncoderParams* encoder,
                        const ClassifierParams& head);

// Mean of -log softmax(logits_b)[label_b] over the batch, stable
// log-sum-exp. logits is [B x 5].
double cross_entropy_loss(const Tensor& logits, const std::vector<SleepStage>& labels);

// Argmax with ties broken toward the lower stage code.
SleepStage argmax_stage(const double* logits, std::size_t n = kStageCount);

// Mini-batch training of head (and encoder when present), in place.
// Deterministic given (seed, config, data). Throws TrainDivergedError with
// the offending epoch/batch when the loss goes non-finite.
TrainResult train(const std::vector<EpochRecord>& dataset, const TrainConfig& config,
                  HassEncoderParams* encoder, ClassifierParams& head);

std::vector<SleepStage> predict(const std::vector<EpochRecord>& dataset,
                                const HassEncoderParams* encoder, const ClassifierParams& head);

double accuracy_against(const std::vector<EpochRecord>& dataset,
                        const std::vector<SleepStage>& predictions);

// ---- Model container (encoder + head + input schema) --------------------

struct StagingModel {
  std::size_t channels = 0;
  std::size_t timesteps = 0;
  std::size_t depth = 1;
  std::optional<HassEncoderParams> encoder;
  ClassifierParams head;
};

// Builds a fresh model. Encoder and head initializations draw from
// sub-streams "init.enc" and "init.head" of `seed`, so changing one
// component does not reshuffle the other.
StagingModel init_model(std::size_t channels, std::size_t timesteps, std::size_t depth,
                        bool use_hass, HeadKind head_kind, std::uint64_t seed,
                        std::size_t heads_intra = 0, std::size_t heads_inter = 0);

// HASSPRM serialization with head tensors under "head.", encoder tensors
// under "enc.intra." / "enc.inter.", and the schema under "meta.".
void save_model(const StagingModel& model, const std::string& path);
StagingModel load_model(const std::string& path);

// ---- Gradient verification ----------------------------------------------

struct GradCheckConfig {
  std::size_t channels = 3;
  std::size_t timesteps = 4;
  std::size_t depth = 1;
  std::size_t heads = 1;
  std::uint64_t seed = 0;
  double step = 1e-4;  // central-difference half step
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
};

// Compares the tape gradients of a two-record cross-entropy loss through the
// full encoder + linear head against central finite differences, coordinate
// by coordinate over every parameter tensor.
GradCheckResult gradcheck_model(const GradCheckConfig& config);

// |a - b| / max(|a|, |b|, 1e-3): relative error with an absolute guard so
// finite-difference noise on near-zero coordinates does not dominate.
double gradcheck_rel_error(double analytic, double numeric);

}  // namespace hass
