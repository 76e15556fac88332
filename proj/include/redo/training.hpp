#pragma once

// Alternating discriminator / generator updates, collapse detection with seeded
// restarts, checkpoints and the metrics log.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "redo/data.hpp"
#include "redo/evaluation.hpp"
#include "redo/networks.hpp"
#include "redo/objectives.hpp"
#include "redo/optim.hpp"

namespace redo {

struct RestartPolicy {
  bool enabled = true;
  int max_restarts = 5;
  double collapse_epsilon = 1e-3;
  int collapse_patience = 100;  // consecutive steps
  long probe_window = 2000;     // steps after (re)initialization during which collapse is watched
};

struct TrainConfig {
  int batch_size = 16;
  long max_steps = 10000;
  double lr_f = 1e-5;
  double lr_gdd = 1e-4;  // generators, discriminator and regressor
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  double weight_decay_f = 1e-4;
  double init_gain = 0.8;
  std::uint64_t seed = 0;
  RestartPolicy restart;
  long checkpoint_every = 0;  // 0: only best and final
  long eval_every = 500;
  int eval_batch = 64;
  LossWeights loss;
  std::string out_dir;  // empty: nothing is written

  void validate() const;
};

/// Every trainable quantity of a run plus the optimizer and random state.
struct TrainState {
  NetworkConfig net;
  std::unique_ptr<ModelSet<float>> models;
  std::vector<Adam<float>> optimizers;  // parallel to models->stores()
  long step = 0;
  int restarts = 0;
  std::uint64_t run_seed = 0;
  Rng rng;
  double lambda_z = 0;

  Adam<float>& optimizer(const std::string& store);
};

/// Freshly initialized networks and optimizers; `seed` drives both the weights and the stream.
TrainState make_train_state(const NetworkConfig& net, const TrainConfig& cfg, std::uint64_t seed);

std::vector<float> sample_latent(int d, Rng& rng);
RegionIndex sample_region(int n, Rng& rng);

/// B uniform draws with replacement; `indices` receives the chosen rows.
Tensor<float> sample_batch(const std::vector<Image>& data, int batch, Rng& rng, std::vector<int>* indices = nullptr);

struct GeneratorLog {
  double loss_g = 0;    // adversarial + lambda_z * info, batch mean
  double loss_adv = 0;
  double loss_z = 0;    // info term, batch mean
  RegionIndex region;
  std::vector<double> mask_mass;  // batch-mean fraction per region
};

struct DiscriminatorLog {
  double loss_d = 0;
  double mean_real = 0;
  double mean_fake = 0;
  std::vector<double> real_scores;
  std::vector<double> fake_scores;
};

/// One generator step. F and G_i descend the total loss, delta descends the info
/// loss alone (grad reaching F and G through delta is scaled by lambda_z); D is frozen.
GeneratorLog generator_update(TrainState& state, const Tensor<float>& batch);
/// Same with the region and the [B, d] codes given instead of drawn.
GeneratorLog generator_update(TrainState& state, const Tensor<float>& batch, RegionIndex i, const Tensor<float>& z);
/// Batch-mean adversarial + lambda_z * info loss for fixed (i, z), touching no state.
double generator_objective(TrainState& state, const Tensor<float>& batch, RegionIndex i, const Tensor<float>& z);
/// One discriminator step on real images versus redraws of `input`. Only D moves.
DiscriminatorLog discriminator_update(TrainState& state, const Tensor<float>& real, const Tensor<float>& input);

struct MassRecord {
  long step = 0;
  std::vector<double> mass;
};

/// True iff some region stays below collapse_epsilon for collapse_patience consecutive
/// records, all taken before probe_window.
bool detect_collapse(const std::vector<MassRecord>& records, const RestartPolicy& policy);

/// Streaming form of detect_collapse.
class CollapseMonitor {
 public:
  explicit CollapseMonitor(RestartPolicy policy) : policy_(policy) {}
  bool observe(const MassRecord& r);
  void reset() { runs_.clear(); }

 private:
  RestartPolicy policy_;
  std::vector<int> runs_;
};

// checkpoint ------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const TrainState& state);
/// Restores networks, moments, counters and the stream. Optimizer settings come from `cfg`.
TrainState load_checkpoint(const std::string& path, const TrainConfig& cfg);
/// Networks only, for inference.
std::unique_ptr<ModelSet<float>> load_models(const std::string& path, NetworkConfig* net = nullptr);

// inference -------------------------------------------------------------------

/// Eval-mode F on a list of images, in chunks.
std::vector<MaskSet> predict_masks(ModelSet<float>& models, const std::vector<Image>& images, int chunk = 64);
EvalResult evaluate_masks(ModelSet<float>& models, const std::vector<LabeledExample>& examples,
                          MatchLevel level = MatchLevel::Dataset, int chunk = 64);
/// Eval-mode redraw of region i with code z (one row per image).
std::vector<Image> redraw_images(ModelSet<float>& models, const std::vector<Image>& images, RegionIndex i,
                                 const std::vector<std::vector<float>>& z);

// loop ------------------------------------------------------------------------

struct TrainData {
  std::vector<Image> train;
  std::vector<LabeledExample> val;
};

struct TrainHooks {
  /// After every (re)initialization; `attempt` is 0 for the first run.
  std::function<void(TrainState&, int attempt)> after_init;
  /// After each evaluation row.
  std::function<void(TrainState&, double val_iou)> on_eval;
  /// Every step, after both updates.
  std::function<void(const TrainState&, const DiscriminatorLog&, const GeneratorLog&)> on_step;
};

struct TrainResult {
  std::string best_checkpoint;
  std::string final_checkpoint;
  long best_step = -1;
  double best_val_iou = -1;
  double final_val_iou = -1;
  int restarts = 0;
  long steps = 0;
  std::vector<long> restart_steps;  // step at which each collapse was detected
};

extern const char* const kMetricsHeader;

TrainResult train(const NetworkConfig& net, const TrainConfig& cfg, const TrainData& data, const TrainHooks& hooks = {});

}  // namespace redo
