#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "a2a/feature_io.hpp"
#include "a2a/geometry.hpp"

namespace a2a {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct PolicyConfig {
    int max_keypoints = 19;
    int embed_dim = 64;
    int layers = 2;
    int heads = 4;
    int mlp_ratio = 4;
    int action_dim = 7;
    bool gate_frozen_uniform = false;

    void validate() const;
    friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

// One observation fed to the policy: tracked keypoint positions with
// their semantic ids, in pixel coordinates of the given frame.
struct KeypointObservation {
    std::vector<Vec2> positions;
    std::vector<int> ids;
    int frame_width = 0;
    int frame_height = 0;
};

struct GatingOutput {
    std::vector<double> weights;  // aligned with the observation order
    std::vector<double> pooled;   // scene embedding h
    double k_eff = 0.0;
};

struct PolicyForwardResult {
    Action action;
    double gripper_logit = 0.0;
    GatingOutput gating;
};

// x' = 2x/(W-1) - 1 per axis; a degenerate axis maps to 0.
std::vector<std::array<double, 2>> normalize_coords(std::span<const Vec2> positions,
                                                    int frame_width, int frame_height);

template <typename Scalar>
struct PolicyParamsT {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    struct Layer {
        Mat ln1_gamma, ln1_beta;
        Mat wq, bq, wk, bk, wv, bv, wo, bo;
        Mat ln2_gamma, ln2_beta;
        Mat mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };

    Mat embed_w1, embed_b1, embed_w2, embed_b2;
    Mat id_table;  // (max_keypoints + 1) rows; last row embeds padding
    std::vector<Layer> layers;
    Mat final_gamma, final_beta;
    Mat gate_w, gate_b;
    Mat trunk_w1, trunk_b1, trunk_w2, trunk_b2;
    Mat delta_w, delta_b, grip_w, grip_b;

    static PolicyParamsT zeros(const PolicyConfig& config);
    static PolicyParamsT init(const PolicyConfig& config, std::uint64_t seed);

    struct NamedTensor {
        std::string name;
        Mat* tensor;
    };
    std::vector<NamedTensor> tensors();
    std::vector<NamedTensor> tensors() const;  // pointers into const self

    void validate(const PolicyConfig& config) const;

    template <typename Other>
    PolicyParamsT<Other> cast() const {
        PolicyParamsT<Other> out;
        auto src = const_cast<PolicyParamsT*>(this)->tensors();
        out.layers.resize(layers.size());
        auto dst = out.tensors();
        for (std::size_t i = 0; i < src.size(); ++i)
            *dst[i].tensor = src[i].tensor->template cast<Other>();
        return out;
    }
};

using PolicyParams = PolicyParamsT<float>;

// Forward activations captured for backprop.
template <typename Scalar>
struct PolicyCacheT {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    std::vector<int> ids;
    std::vector<std::uint8_t> active;
    int n_active = 0;

    Mat coords;        // K x 2 normalized
    Mat pre_e, act_e;  // embed MLP internals
    Mat z0;            // tokens

    struct LayerCache {
        Mat x_in;
        Mat xhat1, a;  // LN1 internals; `a` zeroed on pad rows
        Mat inv_std1;
        Mat q, k, v;
        std::vector<Mat> p;  // per-head attention probabilities
        Mat ctx;
        Mat x_mid;
        Mat xhat2, b;
        Mat inv_std2;
        Mat m1_pre, m1_act;
        Mat x_out;
    };
    std::vector<LayerCache> layers;

    Mat xhat_f, z;  // final norm internals; z zeroed on pad rows
    Mat inv_std_f;

    Mat logits;   // K x 1
    Mat weights;  // K x 1, zero on pads
    Mat pooled;   // d x 1

    Mat trunk_pre1, trunk_act1, trunk_pre2, trunk_act2;
    Mat delta;  // 6 x 1
    Scalar grip_logit = 0;
};

template <typename Scalar>
class PolicyNetT {
  public:
    using Params = PolicyParamsT<Scalar>;
    using Mat = typename Params::Mat;

    explicit PolicyNetT(PolicyConfig config);
    ~PolicyNetT();
    PolicyNetT(const PolicyNetT&) = delete;
    PolicyNetT& operator=(const PolicyNetT&) = delete;

    const PolicyConfig& config() const { return config_; }

    // Full pipeline: normalize -> embed -> encode -> gate -> act.
    PolicyForwardResult forward(const Params& params, const KeypointObservation& obs) const;

    // Same, but keeps activations for a subsequent backward() call.
    PolicyForwardResult forward_cached(const Params& params, const KeypointObservation& obs,
                                       PolicyCacheT<Scalar>& cache) const;

    // Accumulates parameter gradients given the loss gradients at the two
    // action heads. Must be called with the cache filled by forward_cached.
    void backward(const Params& params, const PolicyCacheT<Scalar>& cache,
                  const std::array<double, 6>& d_delta, double d_grip_logit,
                  Params& grads) const;

    // ---- individual stage surfaces ----

    // Tokens for all max_keypoints rows; pad rows carry the pad embedding.
    // active_flags marks which rows are real keypoints.
    Mat embed(const Params& params, std::span<const std::array<double, 2>> coords,
              std::span<const int> ids, std::vector<std::uint8_t>* active_flags_out = nullptr) const;

    // Pre-norm transformer encoder; pad rows pass through unchanged.
    Mat encode(const Params& params, const Mat& tokens,
               const std::vector<std::uint8_t>& active_flags) const;

    // Softmax gate over non-pad tokens; h = sum w_i z_i; k_eff = 1/sum w^2.
    GatingOutput gate_pool(const Params& params, const Mat& encoded,
                           const std::vector<std::uint8_t>& active_flags) const;

    // Trunk MLP and the two linear heads.
    PolicyForwardResult act(const Params& params, std::span<const double> pooled) const;

    PolicyCacheT<Scalar> make_cache() const;

  private:
    PolicyConfig config_;
};

using PolicyNet = PolicyNetT<float>;

// ---- checkpoint (A2PW) ----

struct CheckpointMeta {
    PolicyConfig config;
    std::string extra_json;  // pipeline metadata, "{}" when absent
};

void save_checkpoint(const std::string& path, const PolicyConfig& config,
                     const PolicyParams& params, const std::string& extra_json = "{}");

std::pair<PolicyParams, CheckpointMeta> load_checkpoint(const std::string& path);

}  // namespace a2a
