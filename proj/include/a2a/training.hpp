#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "a2a/feature_io.hpp"
#include "a2a/policy.hpp"
#include "a2a/tracking.hpp"

namespace a2a {

struct TrainConfig {
    int epochs = 300;
    int batch_size = 64;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    double delta_loss_weight = 1.0;
    double gripper_loss_weight = 0.1;
    double eval_fraction = 0.1;
    // Plateau stop on the held-out loss; 0 disables it.
    int early_stop_patience = 60;
    int min_epochs = 100;

    void validate() const;
};

struct TrainReport {
    std::vector<double> train_loss;
    std::vector<double> eval_loss;
    double wall_seconds = 0.0;
    int best_epoch = -1;
    std::string checkpoint_path;
};

// One demonstration reduced to its keypoint streams. ids can change
// across frames (re-anchoring swaps keypoints mid-demo).
struct DistilledDemo {
    int frame_width = 0;
    int frame_height = 0;
    KeypointTrajectory trajectory;
    std::vector<std::vector<int>> ids_per_frame;
    std::vector<Action> actions;

    void validate() const;
    KeypointObservation observation(int t) const;
};

using Dataset = std::vector<DistilledDemo>;

// delta term: mean squared error over the 6 pose components.
// gripper term: BCE for binary targets, squared error otherwise.
double bc_loss(const Action& predicted, const Action& target, double delta_weight,
               double gripper_weight);

// Sample reference into a dataset: (demo index, timestep).
struct SampleRef {
    int demo = 0;
    int t = 0;
};

// Deterministic per-epoch shuffled batches; every timestep of every
// listed demo is one sample, last partial batch kept.
class Batcher {
  public:
    Batcher(const Dataset& dataset, std::vector<int> demo_indices, int batch_size,
            std::uint64_t seed);
    std::vector<std::vector<SampleRef>> epoch_batches(int epoch) const;
    std::size_t num_samples() const { return samples_.size(); }

  private:
    std::vector<SampleRef> samples_;
    int batch_size_;
    std::uint64_t seed_;
};

// Splits demos into train/held-out (held-out = trailing floor(frac*D)).
std::pair<std::vector<int>, std::vector<int>> split_demos(std::size_t num_demos,
                                                          double eval_fraction);

// Adam-optimized behavior cloning. Deterministic given (dataset,
// configs, seed). Returns the best held-out checkpoint.
std::pair<PolicyParams, TrainReport> train(const Dataset& dataset,
                                           const PolicyConfig& policy_config,
                                           const TrainConfig& train_config,
                                           const std::string& checkpoint_out = "");

// Worst relative error between analytic gradients and central finite
// differences over every parameter, on a small random batch (double
// precision).
double gradient_check(const PolicyConfig& policy_config, std::uint64_t seed);

}  // namespace a2a
