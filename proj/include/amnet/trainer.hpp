#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "amnet/config.hpp"
#include "amnet/data.hpp"
#include "amnet/fba.hpp"
#include "amnet/metrics.hpp"
#include "amnet/network.hpp"
#include "amnet/optim.hpp"

namespace amnet {

/// Batch-averaged losses of one epoch. `seg` is 0 for plain networks.
struct EpochLosses {
  int epoch = 0;
  double stage[3] = {0, 0, 0};
  double seg = 0;
  double total = 0;
  double lr = 0;
  double seconds = 0;
};

/// Append-only CSV: epoch,stage1,stage2,stage3,seg,total.
class LossLog {
 public:
  explicit LossLog(const std::filesystem::path& path);
  void append(const EpochLosses& e);
  static std::vector<EpochLosses> read(const std::filesystem::path& path);

 private:
  std::ofstream out_;
};

template <typename T>
class Trainer {
 public:
  /// `s_store` is required for multitask networks and holds the RGB-S
  /// feedback maps keyed by sample id.
  Trainer(AmNet<T>& net, RunConfig config, std::vector<StereoSample> train, SChannelStore* s_store = nullptr);

  /// One pass over the training set (epoch is 1-based). For multitask
  /// networks the S maps predicted during the epoch replace the stored ones
  /// once the epoch ends.
  EpochLosses run_epoch(int epoch);

  const RunConfig& config() const { return config_; }
  Adam<T>& optimizer() { return opt_; }

 private:
  AmNet<T>& net_;
  RunConfig config_;
  std::vector<StereoSample> train_;
  SChannelStore* s_store_;
  Adam<T> opt_;
};

/// Eval-mode final-stage disparities, cropped back to each sample's size.
/// Multitask networks receive zero S maps.
template <typename T>
std::vector<std::vector<float>> predict(AmNet<T>& net, const std::vector<StereoSample>& samples, int batch = 4);

/// Eval-mode foreground probabilities (zero S input) of a multitask network.
template <typename T>
std::vector<std::vector<float>> predict_foreground(AmNet<T>& net, const std::vector<StereoSample>& samples,
                                                   const SChannelStore* s_store = nullptr, int batch = 4);

/// Metrics of `predictions` against the samples' ground truth.
EvalReport evaluate(const std::vector<StereoSample>& samples, const std::vector<std::vector<float>>& predictions);

/// Mean per-image foreground IoU of probability maps thresholded at 0.5.
double mean_foreground_iou(const std::vector<StereoSample>& samples, const std::vector<std::vector<float>>& fg_probs);

struct DegenerateCheckResult {
  bool bitwise_equal = false;
  double max_abs_diff = 0;
  std::vector<EpochLosses> plain_history, multitask_history;
};

/// Trains a plain network and its multitask twin side by side from the same
/// seed. The twin runs with lambda = 0, frozen segmentation head and S branch,
/// and an S channel held at zero. Compares the final disparities on `eval`.
DegenerateCheckResult degenerate_multitask_check(RunConfig config, const std::vector<StereoSample>& train,
                                                 const std::vector<StereoSample>& eval, int epochs);

struct TrainRunResult {
  std::vector<EpochLosses> history;
  std::optional<EvalReport> validation;
  std::optional<double> validation_iou;
  std::optional<double> train_iou;  ///< IoU of the final stored S maps
};

/// The `train` command: reads data, writes the effective config, loss log,
/// per-epoch checkpoints and (multitask) the S store under config.out_dir.
/// `progress` is called after every epoch.
TrainRunResult run_training(const RunConfig& config, const std::function<void(const EpochLosses&)>& progress = {});

}  // namespace amnet
