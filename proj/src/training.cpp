#include "a2a/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "a2a/errors.hpp"
#include "a2a/rng.hpp"

namespace a2a {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

bool is_binary(double y) { return y == 0.0 || y == 1.0; }

// Loss and gripper-logit gradient computed from the logit, so the
// gradient path and the reported loss stay consistent.
double gripper_loss_from_logit(double logit, double target, double* d_logit) {
    if (is_binary(target)) {
        if (d_logit) *d_logit = sigmoid(logit) - target;
        return softplus(logit) - target * logit;
    }
    const double p = sigmoid(logit);
    if (d_logit) *d_logit = 2.0 * (p - target) * p * (1.0 - p);
    return (p - target) * (p - target);
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1) throw ValidationError("epochs and batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (delta_loss_weight < 0.0 || gripper_loss_weight < 0.0)
        throw ValidationError("loss weights must be >= 0");
    if (eval_fraction < 0.0 || eval_fraction >= 1.0)
        throw ValidationError("eval fraction must lie in [0, 1)");
    if (early_stop_patience < 0 || min_epochs < 0)
        throw ValidationError("early stop settings must be >= 0");
}

void DistilledDemo::validate() const {
    if (frame_width < 1 || frame_height < 1)
        throw ValidationError("demo frame dimensions must be positive");
    const int t = trajectory.num_frames;
    if (t < 2) throw ValidationError("demo must span at least 2 steps");
    if (static_cast<int>(actions.size()) != t)
        throw ValidationError("actions length must equal track length");
    if (static_cast<int>(ids_per_frame.size()) != t)
        throw ValidationError("per-frame ids must cover every frame");
    for (const auto& ids : ids_per_frame) {
        if (static_cast<int>(ids.size()) != trajectory.num_points)
            throw ValidationError("per-frame id count must equal num_points");
    }
    trajectory.validate(frame_width, frame_height);
    for (const Action& a : actions) a.validate();
}

KeypointObservation DistilledDemo::observation(int t) const {
    KeypointObservation obs;
    obs.frame_width = frame_width;
    obs.frame_height = frame_height;
    obs.ids = ids_per_frame[t];
    obs.positions.reserve(trajectory.num_points);
    for (int i = 0; i < trajectory.num_points; ++i) obs.positions.push_back(trajectory.at(t, i));
    return obs;
}

double bc_loss(const Action& predicted, const Action& target, double delta_weight,
               double gripper_weight) {
    predicted.validate();
    target.validate();
    double delta = 0.0;
    for (int i = 0; i < 6; ++i) {
        const double e = predicted.v[i] - target.v[i];
        delta += e * e;
    }
    delta /= 6.0;

    double grip;
    const double p = std::clamp(predicted.gripper(), 1e-12, 1.0 - 1e-12);
    if (is_binary(target.gripper())) {
        grip = -(target.gripper() * std::log(p) + (1.0 - target.gripper()) * std::log(1.0 - p));
    } else {
        grip = (predicted.gripper() - target.gripper()) * (predicted.gripper() - target.gripper());
    }
    return delta_weight * delta + gripper_weight * grip;
}

Batcher::Batcher(const Dataset& dataset, std::vector<int> demo_indices, int batch_size,
                 std::uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
    if (dataset.empty() || demo_indices.empty())
        throw ValidationError("dataset must be non-empty");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    for (int d : demo_indices) {
        const auto& demo = dataset[d];
        for (int t = 0; t < demo.trajectory.num_frames; ++t) samples_.push_back({d, t});
    }
}

std::vector<std::vector<SampleRef>> Batcher::epoch_batches(int epoch) const {
    std::vector<SampleRef> order = samples_;
    Rng rng(mix_seed(seed_, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        std::swap(order[i - 1], order[j]);
    }
    std::vector<std::vector<SampleRef>> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size_) {
        const std::size_t end = std::min(order.size(), start + batch_size_);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

std::pair<std::vector<int>, std::vector<int>> split_demos(std::size_t num_demos,
                                                          double eval_fraction) {
    const int held = static_cast<int>(std::floor(eval_fraction * static_cast<double>(num_demos)));
    const int train_count = static_cast<int>(num_demos) - held;
    if (train_count < 1) throw ValidationError("eval fraction leaves no training demos");
    std::vector<int> train_idx, eval_idx;
    for (int i = 0; i < train_count; ++i) train_idx.push_back(i);
    for (int i = train_count; i < static_cast<int>(num_demos); ++i) eval_idx.push_back(i);
    return {train_idx, eval_idx};
}

namespace {

struct AdamState {
    std::vector<Eigen::MatrixXf> m;
    std::vector<Eigen::MatrixXf> v;
    int step = 0;
};

}  // namespace

std::pair<PolicyParams, TrainReport> train(const Dataset& dataset,
                                           const PolicyConfig& policy_config,
                                           const TrainConfig& train_config,
                                           const std::string& checkpoint_out) {
    policy_config.validate();
    train_config.validate();
    if (dataset.empty()) throw ValidationError("dataset must be non-empty");
    for (const auto& demo : dataset) demo.validate();

    const auto started = std::chrono::steady_clock::now();
    auto [train_idx, eval_idx] = split_demos(dataset.size(), train_config.eval_fraction);
    Batcher batcher(dataset, train_idx, train_config.batch_size, train_config.seed);

    PolicyNet net(policy_config);
    PolicyParams params = PolicyParams::init(policy_config, train_config.seed);
    PolicyParams grads = PolicyParams::zeros(policy_config);

    AdamState adam;
    {
        auto named = params.tensors();
        for (auto& nt : named) {
            adam.m.emplace_back(Eigen::MatrixXf::Zero(nt.tensor->rows(), nt.tensor->cols()));
            adam.v.emplace_back(Eigen::MatrixXf::Zero(nt.tensor->rows(), nt.tensor->cols()));
        }
    }
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

    const double wd = train_config.delta_loss_weight;
    const double wg = train_config.gripper_loss_weight;

    auto sample_loss = [&](const SampleRef& ref, PolicyParams* grad_sink,
                           PolicyCacheT<float>& cache) {
        const DistilledDemo& demo = dataset[ref.demo];
        const KeypointObservation obs = demo.observation(ref.t);
        const Action& target = demo.actions[ref.t];
        const PolicyForwardResult fwd = grad_sink ? net.forward_cached(params, obs, cache)
                                                  : net.forward(params, obs);
        double loss = 0.0;
        std::array<double, 6> d_delta{};
        for (int i = 0; i < 6; ++i) {
            const double e = fwd.action.v[i] - target.v[i];
            loss += e * e;
            d_delta[i] = wd * (2.0 / 6.0) * e;
        }
        loss = wd * loss / 6.0;
        double d_logit = 0.0;
        loss += wg * gripper_loss_from_logit(fwd.gripper_logit, target.gripper(), &d_logit);
        if (grad_sink) net.backward(params, cache, d_delta, wg * d_logit, *grad_sink);
        return loss;
    };

    TrainReport report;
    PolicyParams best_params = params;
    double best_metric = std::numeric_limits<double>::infinity();
    PolicyCacheT<float> cache;

    for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t epoch_samples = 0;
        for (const auto& batch : batcher.epoch_batches(epoch)) {
            auto grad_named = grads.tensors();
            for (auto& nt : grad_named) nt.tensor->setZero();
            double batch_loss = 0.0;
            for (const SampleRef& ref : batch) batch_loss += sample_loss(ref, &grads, cache);
            const float inv_b = 1.0f / static_cast<float>(batch.size());

            ++adam.step;
            const double bc1 = 1.0 - std::pow(kBeta1, adam.step);
            const double bc2 = 1.0 - std::pow(kBeta2, adam.step);
            auto param_named = params.tensors();
            for (std::size_t i = 0; i < param_named.size(); ++i) {
                Eigen::MatrixXf g = *grad_named[i].tensor * inv_b;
                adam.m[i] = static_cast<float>(kBeta1) * adam.m[i] +
                            static_cast<float>(1.0 - kBeta1) * g;
                adam.v[i] = static_cast<float>(kBeta2) * adam.v[i] +
                            static_cast<float>(1.0 - kBeta2) * g.cwiseProduct(g);
                Eigen::MatrixXf mhat = adam.m[i] / static_cast<float>(bc1);
                Eigen::MatrixXf vhat = adam.v[i] / static_cast<float>(bc2);
                *param_named[i].tensor -=
                    static_cast<float>(train_config.learning_rate) *
                    (mhat.array() / (vhat.array().sqrt() + static_cast<float>(kAdamEps)))
                        .matrix();
            }
            batch_loss /= static_cast<double>(batch.size());
            if (!std::isfinite(batch_loss))
                throw Error("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch));
            epoch_loss += batch_loss * static_cast<double>(batch.size());
            epoch_samples += batch.size();
        }
        report.train_loss.push_back(epoch_loss / static_cast<double>(epoch_samples));

        double eval_loss = report.train_loss.back();
        if (!eval_idx.empty()) {
            double sum = 0.0;
            std::size_t count = 0;
            for (int d : eval_idx) {
                for (int t = 0; t < dataset[d].trajectory.num_frames; ++t) {
                    sum += sample_loss({d, t}, nullptr, cache);
                    ++count;
                }
            }
            eval_loss = sum / static_cast<double>(count);
        }
        report.eval_loss.push_back(eval_loss);
        if (!std::isfinite(eval_loss))
            throw Error("training diverged: non-finite held-out loss");

        if (eval_loss < best_metric) {
            best_metric = eval_loss;
            best_params = params;
            report.best_epoch = epoch;
        }
        if (train_config.early_stop_patience > 0 && epoch + 1 >= train_config.min_epochs &&
            epoch - report.best_epoch >= train_config.early_stop_patience) {
            break;
        }
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (!checkpoint_out.empty()) {
        save_checkpoint(checkpoint_out, policy_config, best_params);
        report.checkpoint_path = checkpoint_out;
    }
    return {std::move(best_params), std::move(report)};
}

double gradient_check(const PolicyConfig& policy_config, std::uint64_t seed) {
    policy_config.validate();
    PolicyNetT<double> net(policy_config);
    PolicyParamsT<double> params = PolicyParamsT<double>::init(policy_config, seed);

    // A small batch that exercises both gripper loss branches.
    Rng rng(mix_seed(seed, 0x6772616421ULL));
    const int frame_w = 32, frame_h = 32;
    std::vector<KeypointObservation> observations;
    std::vector<Action> targets;
    const double grip_targets[3] = {1.0, 0.0, 0.35};
    for (int s = 0; s < 3; ++s) {
        KeypointObservation obs;
        obs.frame_width = frame_w;
        obs.frame_height = frame_h;
        const int n = 1 + static_cast<int>(rng.uniform_index(policy_config.max_keypoints));
        std::vector<int> pool(policy_config.max_keypoints);
        for (int i = 0; i < policy_config.max_keypoints; ++i) pool[i] = i;
        for (int i = 0; i < n; ++i) {
            const std::size_t j = i + rng.uniform_index(pool.size() - i);
            std::swap(pool[i], pool[j]);
            obs.ids.push_back(pool[i]);
            obs.positions.push_back(
                {rng.uniform(0.0, frame_w - 1.0), rng.uniform(0.0, frame_h - 1.0)});
        }
        observations.push_back(std::move(obs));
        Action a;
        for (int i = 0; i < 6; ++i) a.v[i] = rng.normal(0.0, 0.5);
        a.v[6] = grip_targets[s];
        targets.push_back(a);
    }

    const double wd = 1.0, wg = 0.5;
    auto batch_loss = [&](const PolicyParamsT<double>& p) {
        double total = 0.0;
        for (std::size_t s = 0; s < observations.size(); ++s) {
            const PolicyForwardResult fwd = net.forward(p, observations[s]);
            double loss = 0.0;
            for (int i = 0; i < 6; ++i) {
                const double e = fwd.action.v[i] - targets[s].v[i];
                loss += e * e;
            }
            loss = wd * loss / 6.0;
            loss += wg * gripper_loss_from_logit(fwd.gripper_logit, targets[s].gripper(), nullptr);
            total += loss;
        }
        return total / static_cast<double>(observations.size());
    };

    PolicyParamsT<double> grads = PolicyParamsT<double>::zeros(policy_config);
    PolicyCacheT<double> cache;
    for (std::size_t s = 0; s < observations.size(); ++s) {
        const PolicyForwardResult fwd = net.forward_cached(params, observations[s], cache);
        std::array<double, 6> d_delta{};
        for (int i = 0; i < 6; ++i)
            d_delta[i] = wd * (2.0 / 6.0) * (fwd.action.v[i] - targets[s].v[i]);
        double d_logit = 0.0;
        gripper_loss_from_logit(fwd.gripper_logit, targets[s].gripper(), &d_logit);
        net.backward(params, cache, d_delta, wg * d_logit, grads);
    }
    const double inv_n = 1.0 / static_cast<double>(observations.size());

    constexpr double kStep = 1e-4;
    double worst = 0.0;
    auto param_named = params.tensors();
    auto grad_named = grads.tensors();
    for (std::size_t ti = 0; ti < param_named.size(); ++ti) {
        auto& tensor = *param_named[ti].tensor;
        const auto& grad = *grad_named[ti].tensor;
        for (Eigen::Index c = 0; c < tensor.cols(); ++c) {
            for (Eigen::Index r = 0; r < tensor.rows(); ++r) {
                const double saved = tensor(r, c);
                tensor(r, c) = saved + kStep;
                const double up = batch_loss(params);
                tensor(r, c) = saved - kStep;
                const double down = batch_loss(params);
                tensor(r, c) = saved;
                const double fd = (up - down) / (2.0 * kStep);
                const double an = grad(r, c) * inv_n;
                const double rel =
                    std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

}  // namespace a2a
