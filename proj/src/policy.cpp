#include "a2a/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "a2a/errors.hpp"
#include "a2a/rng.hpp"
#include "json.hpp"

namespace a2a {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kMaskedLogit = -1e30;

template <typename Scalar>
Scalar gelu(Scalar x) {
    return static_cast<Scalar>(0.5) * x *
           (static_cast<Scalar>(1) + std::erf(x * static_cast<Scalar>(M_SQRT1_2)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
    const Scalar phi = static_cast<Scalar>(0.5) *
                       (static_cast<Scalar>(1) + std::erf(x * static_cast<Scalar>(M_SQRT1_2)));
    const Scalar pdf = std::exp(static_cast<Scalar>(-0.5) * x * x) *
                       static_cast<Scalar>(0.3989422804014326779399460599343);
    return phi + x * pdf;
}

}  // namespace

void PolicyConfig::validate() const {
    if (max_keypoints < 1 || embed_dim < 1 || layers < 1 || heads < 1 || mlp_ratio < 1)
        throw ValidationError("policy config counts must be >= 1");
    if (embed_dim % heads != 0)
        throw ValidationError("embed_dim must be divisible by heads");
    if (action_dim != 7) throw ValidationError("action_dim must be 7");
}

std::vector<std::array<double, 2>> normalize_coords(std::span<const Vec2> positions,
                                                    int frame_width, int frame_height) {
    if (frame_width < 1 || frame_height < 1)
        throw ValidationError("frame dimensions must be positive");
    std::vector<std::array<double, 2>> out;
    out.reserve(positions.size());
    for (const Vec2& p : positions) {
        if (p.x < 0 || p.x > frame_width - 1 || p.y < 0 || p.y > frame_height - 1)
            throw ValidationError("keypoint position out of frame bounds");
        const double nx = frame_width > 1 ? 2.0 * p.x / (frame_width - 1) - 1.0 : 0.0;
        const double ny = frame_height > 1 ? 2.0 * p.y / (frame_height - 1) - 1.0 : 0.0;
        out.push_back({nx, ny});
    }
    return out;
}

// ---- parameters ----

template <typename Scalar>
PolicyParamsT<Scalar> PolicyParamsT<Scalar>::zeros(const PolicyConfig& config) {
    config.validate();
    const int d = config.embed_dim;
    const int rd = config.mlp_ratio * d;
    PolicyParamsT p;
    p.embed_w1 = Mat::Zero(d, 2);
    p.embed_b1 = Mat::Zero(d, 1);
    p.embed_w2 = Mat::Zero(d, d);
    p.embed_b2 = Mat::Zero(d, 1);
    p.id_table = Mat::Zero(config.max_keypoints + 1, d);
    p.layers.resize(config.layers);
    for (auto& l : p.layers) {
        l.ln1_gamma = Mat::Zero(d, 1);
        l.ln1_beta = Mat::Zero(d, 1);
        l.wq = Mat::Zero(d, d);
        l.bq = Mat::Zero(d, 1);
        l.wk = Mat::Zero(d, d);
        l.bk = Mat::Zero(d, 1);
        l.wv = Mat::Zero(d, d);
        l.bv = Mat::Zero(d, 1);
        l.wo = Mat::Zero(d, d);
        l.bo = Mat::Zero(d, 1);
        l.ln2_gamma = Mat::Zero(d, 1);
        l.ln2_beta = Mat::Zero(d, 1);
        l.mlp_w1 = Mat::Zero(rd, d);
        l.mlp_b1 = Mat::Zero(rd, 1);
        l.mlp_w2 = Mat::Zero(d, rd);
        l.mlp_b2 = Mat::Zero(d, 1);
    }
    p.final_gamma = Mat::Zero(d, 1);
    p.final_beta = Mat::Zero(d, 1);
    p.gate_w = Mat::Zero(d, 1);
    p.gate_b = Mat::Zero(1, 1);
    p.trunk_w1 = Mat::Zero(d, d);
    p.trunk_b1 = Mat::Zero(d, 1);
    p.trunk_w2 = Mat::Zero(d, d);
    p.trunk_b2 = Mat::Zero(d, 1);
    p.delta_w = Mat::Zero(6, d);
    p.delta_b = Mat::Zero(6, 1);
    p.grip_w = Mat::Zero(1, d);
    p.grip_b = Mat::Zero(1, 1);
    return p;
}

template <typename Scalar>
PolicyParamsT<Scalar> PolicyParamsT<Scalar>::init(const PolicyConfig& config,
                                                  std::uint64_t seed) {
    PolicyParamsT p = zeros(config);
    Rng rng(seed);
    const int d = config.embed_dim;
    auto fill = [&rng](Mat& m, double stddev) {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                m(r, c) = static_cast<Scalar>(rng.normal(0.0, stddev));
    };
    const double s_in = 1.0 / std::sqrt(2.0);
    const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double s_rd = 1.0 / std::sqrt(static_cast<double>(config.mlp_ratio * d));
    fill(p.embed_w1, s_in);
    fill(p.embed_w2, s_d);
    fill(p.id_table, s_d);
    for (auto& l : p.layers) {
        l.ln1_gamma.setOnes();
        fill(l.wq, s_d);
        fill(l.wk, s_d);
        fill(l.wv, s_d);
        fill(l.wo, s_d);
        l.ln2_gamma.setOnes();
        fill(l.mlp_w1, s_d);
        fill(l.mlp_w2, s_rd);
    }
    p.final_gamma.setOnes();
    // Gate starts uniform; heads start near zero for a calm initial policy.
    fill(p.trunk_w1, s_d);
    fill(p.trunk_w2, s_d);
    fill(p.delta_w, 0.01);
    fill(p.grip_w, 0.01);
    return p;
}

template <typename Scalar>
auto PolicyParamsT<Scalar>::tensors() -> std::vector<NamedTensor> {
    std::vector<NamedTensor> out;
    out.push_back({"embed.fc1.w", &embed_w1});
    out.push_back({"embed.fc1.b", &embed_b1});
    out.push_back({"embed.fc2.w", &embed_w2});
    out.push_back({"embed.fc2.b", &embed_b2});
    out.push_back({"embed.id_table", &id_table});
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string prefix = "layers." + std::to_string(i) + ".";
        auto& l = layers[i];
        out.push_back({prefix + "ln1.gamma", &l.ln1_gamma});
        out.push_back({prefix + "ln1.beta", &l.ln1_beta});
        out.push_back({prefix + "attn.wq", &l.wq});
        out.push_back({prefix + "attn.bq", &l.bq});
        out.push_back({prefix + "attn.wk", &l.wk});
        out.push_back({prefix + "attn.bk", &l.bk});
        out.push_back({prefix + "attn.wv", &l.wv});
        out.push_back({prefix + "attn.bv", &l.bv});
        out.push_back({prefix + "attn.wo", &l.wo});
        out.push_back({prefix + "attn.bo", &l.bo});
        out.push_back({prefix + "ln2.gamma", &l.ln2_gamma});
        out.push_back({prefix + "ln2.beta", &l.ln2_beta});
        out.push_back({prefix + "mlp.fc1.w", &l.mlp_w1});
        out.push_back({prefix + "mlp.fc1.b", &l.mlp_b1});
        out.push_back({prefix + "mlp.fc2.w", &l.mlp_w2});
        out.push_back({prefix + "mlp.fc2.b", &l.mlp_b2});
    }
    out.push_back({"final_norm.gamma", &final_gamma});
    out.push_back({"final_norm.beta", &final_beta});
    out.push_back({"gate.w", &gate_w});
    out.push_back({"gate.b", &gate_b});
    out.push_back({"trunk.fc1.w", &trunk_w1});
    out.push_back({"trunk.fc1.b", &trunk_b1});
    out.push_back({"trunk.fc2.w", &trunk_w2});
    out.push_back({"trunk.fc2.b", &trunk_b2});
    out.push_back({"head.delta.w", &delta_w});
    out.push_back({"head.delta.b", &delta_b});
    out.push_back({"head.gripper.w", &grip_w});
    out.push_back({"head.gripper.b", &grip_b});
    return out;
}

template <typename Scalar>
auto PolicyParamsT<Scalar>::tensors() const -> std::vector<NamedTensor> {
    return const_cast<PolicyParamsT*>(this)->tensors();
}

template <typename Scalar>
void PolicyParamsT<Scalar>::validate(const PolicyConfig& config) const {
    config.validate();
    PolicyParamsT ref = zeros(config);
    auto mine = tensors();
    auto want = ref.tensors();
    if (mine.size() != want.size()) throw ValidationError("parameter tensor set mismatch");
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (mine[i].tensor->rows() != want[i].tensor->rows() ||
            mine[i].tensor->cols() != want[i].tensor->cols())
            throw ValidationError("parameter tensor shape mismatch: " + mine[i].name);
        if (!mine[i].tensor->allFinite())
            throw ValidationError("parameter tensor has non-finite values: " + mine[i].name);
    }
}

// ---- net ----

template <typename Scalar>
PolicyNetT<Scalar>::PolicyNetT(PolicyConfig config) : config_(config) {
    config_.validate();
}

template <typename Scalar>
PolicyNetT<Scalar>::~PolicyNetT() = default;

template <typename Scalar>
PolicyCacheT<Scalar> PolicyNetT<Scalar>::make_cache() const {
    return PolicyCacheT<Scalar>{};
}

namespace {

// LayerNorm over the feature axis for active rows; inactive rows of the
// output are zeroed. Returns normalized xhat and 1/std per row.
template <typename Mat, typename Vec>
void layer_norm_forward(const Mat& x, const std::vector<std::uint8_t>& active, const Vec& gamma,
                        const Vec& beta, Mat& xhat, Mat& inv_std, Mat& out) {
    using Scalar = typename Mat::Scalar;
    const Eigen::Index k = x.rows(), d = x.cols();
    xhat.setZero(k, d);
    inv_std.setZero(k, 1);
    out.setZero(k, d);
    for (Eigen::Index i = 0; i < k; ++i) {
        if (!active[static_cast<std::size_t>(i)]) continue;
        const Scalar mu = x.row(i).mean();
        Scalar var = 0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const Scalar c = x(i, j) - mu;
            var += c * c;
        }
        var /= static_cast<Scalar>(d);
        const Scalar s = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLnEps));
        inv_std(i, 0) = s;
        for (Eigen::Index j = 0; j < d; ++j) {
            xhat(i, j) = (x(i, j) - mu) * s;
            out(i, j) = gamma(j, 0) * xhat(i, j) + beta(j, 0);
        }
    }
}

// Backward for the layer norm above; accumulates into dgamma/dbeta and dx.
template <typename Mat, typename Vec>
void layer_norm_backward(const Mat& dy, const Mat& xhat, const Mat& inv_std,
                         const std::vector<std::uint8_t>& active, const Vec& gamma, Vec& dgamma,
                         Vec& dbeta, Mat& dx) {
    using Scalar = typename Mat::Scalar;
    const Eigen::Index k = dy.rows(), d = dy.cols();
    for (Eigen::Index i = 0; i < k; ++i) {
        if (!active[static_cast<std::size_t>(i)]) continue;
        Scalar mean_g = 0, mean_gx = 0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const Scalar g = gamma(j, 0) * dy(i, j);
            mean_g += g;
            mean_gx += g * xhat(i, j);
            dgamma(j, 0) += dy(i, j) * xhat(i, j);
            dbeta(j, 0) += dy(i, j);
        }
        mean_g /= static_cast<Scalar>(d);
        mean_gx /= static_cast<Scalar>(d);
        const Scalar s = inv_std(i, 0);
        for (Eigen::Index j = 0; j < d; ++j) {
            const Scalar g = gamma(j, 0) * dy(i, j);
            dx(i, j) += s * (g - mean_g - xhat(i, j) * mean_gx);
        }
    }
}

template <typename Mat>
void zero_inactive_rows(Mat& m, const std::vector<std::uint8_t>& active) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (!active[static_cast<std::size_t>(i)]) m.row(i).setZero();
    }
}

}  // namespace

template <typename Scalar>
auto PolicyNetT<Scalar>::embed(const Params& params,
                               std::span<const std::array<double, 2>> coords,
                               std::span<const int> ids,
                               std::vector<std::uint8_t>* active_flags_out) const -> Mat {
    if (coords.size() != ids.size())
        throw ValidationError("coordinate and id counts must match");
    const int n = static_cast<int>(coords.size());
    if (n < 1) throw ValidationError("at least one keypoint required");
    if (n > config_.max_keypoints)
        throw ValidationError("more keypoints than the configured maximum");
    for (int id : ids) {
        if (id < 0 || id >= config_.max_keypoints)
            throw ValidationError("keypoint id out of embedding range");
    }

    const int k = config_.max_keypoints;
    Mat c = Mat::Zero(k, 2);
    for (int i = 0; i < n; ++i) {
        c(i, 0) = static_cast<Scalar>(coords[i][0]);
        c(i, 1) = static_cast<Scalar>(coords[i][1]);
    }
    Mat pre = (c * params.embed_w1.transpose()).rowwise() + params.embed_b1.col(0).transpose();
    Mat act = pre.unaryExpr([](Scalar x) { return gelu(x); });
    Mat tokens =
        (act * params.embed_w2.transpose()).rowwise() + params.embed_b2.col(0).transpose();
    for (int i = 0; i < n; ++i) tokens.row(i) += params.id_table.row(ids[i]);
    for (int i = n; i < k; ++i) tokens.row(i) = params.id_table.row(config_.max_keypoints);

    if (active_flags_out) {
        active_flags_out->assign(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) (*active_flags_out)[i] = 1;
    }
    return tokens;
}

template <typename Scalar>
auto PolicyNetT<Scalar>::encode(const Params& params, const Mat& tokens,
                                const std::vector<std::uint8_t>& active_flags) const -> Mat {
    PolicyCacheT<Scalar> cache;
    cache.active = active_flags;
    cache.n_active = static_cast<int>(
        std::count(active_flags.begin(), active_flags.end(), std::uint8_t{1}));
    if (cache.n_active < 1) throw ValidationError("encoder needs at least one non-pad token");

    Mat x = tokens;
    const int heads = config_.heads;
    const int d = config_.embed_dim;
    const int dh = d / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const Eigen::Index k = x.rows();

    cache.layers.resize(params.layers.size());
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& lp = params.layers[li];
        auto& lc = cache.layers[li];
        lc.x_in = x;
        layer_norm_forward(x, active_flags, lp.ln1_gamma, lp.ln1_beta, lc.xhat1, lc.inv_std1,
                           lc.a);
        lc.q = (lc.a * lp.wq.transpose()).rowwise() + lp.bq.col(0).transpose();
        lc.k = (lc.a * lp.wk.transpose()).rowwise() + lp.bk.col(0).transpose();
        lc.v = (lc.a * lp.wv.transpose()).rowwise() + lp.bv.col(0).transpose();
        lc.ctx.setZero(k, d);
        lc.p.assign(heads, Mat());
        for (int h = 0; h < heads; ++h) {
            auto qh = lc.q.middleCols(h * dh, dh);
            auto kh = lc.k.middleCols(h * dh, dh);
            auto vh = lc.v.middleCols(h * dh, dh);
            Mat s = qh * kh.transpose() * scale;
            for (Eigen::Index j = 0; j < k; ++j) {
                if (!active_flags[static_cast<std::size_t>(j)])
                    s.col(j).setConstant(static_cast<Scalar>(kMaskedLogit));
            }
            Mat p = Mat::Zero(k, k);
            for (Eigen::Index i = 0; i < k; ++i) {
                if (!active_flags[static_cast<std::size_t>(i)]) continue;
                const Scalar mx = s.row(i).maxCoeff();
                Scalar denom = 0;
                for (Eigen::Index j = 0; j < k; ++j) {
                    const Scalar e = std::exp(s(i, j) - mx);
                    p(i, j) = e;
                    denom += e;
                }
                p.row(i) /= denom;
            }
            lc.ctx.middleCols(h * dh, dh) = p * vh;
            lc.p[h] = std::move(p);
        }
        Mat attn_out =
            (lc.ctx * lp.wo.transpose()).rowwise() + lp.bo.col(0).transpose();
        zero_inactive_rows(attn_out, active_flags);
        lc.x_mid = x + attn_out;

        layer_norm_forward(lc.x_mid, active_flags, lp.ln2_gamma, lp.ln2_beta, lc.xhat2,
                           lc.inv_std2, lc.b);
        lc.m1_pre = (lc.b * lp.mlp_w1.transpose()).rowwise() + lp.mlp_b1.col(0).transpose();
        lc.m1_act = lc.m1_pre.unaryExpr([](Scalar v) { return gelu(v); });
        Mat m2 =
            (lc.m1_act * lp.mlp_w2.transpose()).rowwise() + lp.mlp_b2.col(0).transpose();
        zero_inactive_rows(m2, active_flags);
        lc.x_out = lc.x_mid + m2;
        x = lc.x_out;
    }

    Mat xhat_f, inv_std_f, z;
    layer_norm_forward(x, active_flags, params.final_gamma, params.final_beta, xhat_f, inv_std_f,
                       z);
    // Pad rows pass through unchanged.
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        if (!active_flags[static_cast<std::size_t>(i)]) z.row(i) = tokens.row(i);
    }
    return z;
}

template <typename Scalar>
GatingOutput PolicyNetT<Scalar>::gate_pool(const Params& params, const Mat& encoded,
                                           const std::vector<std::uint8_t>& active_flags) const {
    const Eigen::Index k = encoded.rows();
    const int d = config_.embed_dim;
    std::vector<Eigen::Index> act_rows;
    for (Eigen::Index i = 0; i < k; ++i) {
        if (active_flags[static_cast<std::size_t>(i)]) act_rows.push_back(i);
    }
    if (act_rows.empty()) throw ValidationError("gate needs at least one non-pad token");
    const int n = static_cast<int>(act_rows.size());

    std::vector<Scalar> w(act_rows.size());
    if (config_.gate_frozen_uniform) {
        std::fill(w.begin(), w.end(), Scalar(1) / static_cast<Scalar>(n));
    } else {
        std::vector<Scalar> logits(act_rows.size());
        Scalar mx = std::numeric_limits<Scalar>::lowest();
        for (std::size_t i = 0; i < act_rows.size(); ++i) {
            logits[i] = encoded.row(act_rows[i]).dot(params.gate_w.col(0).transpose()) +
                        params.gate_b(0, 0);
            mx = std::max(mx, logits[i]);
        }
        Scalar denom = 0;
        for (std::size_t i = 0; i < act_rows.size(); ++i) {
            w[i] = std::exp(logits[i] - mx);
            denom += w[i];
        }
        for (Scalar& v : w) v /= denom;
    }

    GatingOutput out;
    out.weights.assign(w.begin(), w.end());
    out.pooled.assign(d, 0.0);
    for (std::size_t i = 0; i < act_rows.size(); ++i) {
        for (int j = 0; j < d; ++j)
            out.pooled[j] += static_cast<double>(w[i]) * encoded(act_rows[i], j);
    }
    // All-equal weights mean a uniform gate; report the count exactly
    // rather than routing through 1/sum(w^2) rounding.
    const bool all_equal =
        std::all_of(w.begin(), w.end(), [&](Scalar v) { return v == w[0]; });
    if (all_equal) {
        out.k_eff = static_cast<double>(n);
    } else {
        double s2 = 0.0;
        for (Scalar v : w) s2 += static_cast<double>(v) * v;
        out.k_eff = 1.0 / s2;
    }
    return out;
}

template <typename Scalar>
PolicyForwardResult PolicyNetT<Scalar>::act(const Params& params,
                                            std::span<const double> pooled) const {
    const int d = config_.embed_dim;
    if (static_cast<int>(pooled.size()) != d)
        throw ValidationError("pooled embedding has wrong dimension");
    Mat h(d, 1);
    for (int i = 0; i < d; ++i) {
        if (!std::isfinite(pooled[i])) throw ValidationError("pooled embedding must be finite");
        h(i, 0) = static_cast<Scalar>(pooled[i]);
    }
    Mat pre1 = params.trunk_w1 * h + params.trunk_b1;
    Mat act1 = pre1.unaryExpr([](Scalar v) { return gelu(v); });
    Mat pre2 = params.trunk_w2 * act1 + params.trunk_b2;
    Mat act2 = pre2.unaryExpr([](Scalar v) { return gelu(v); });
    Mat delta = params.delta_w * act2 + params.delta_b;
    const Scalar grip_logit = (params.grip_w * act2 + params.grip_b)(0, 0);

    PolicyForwardResult out;
    for (int i = 0; i < 6; ++i) out.action.v[i] = static_cast<double>(delta(i, 0));
    out.gripper_logit = static_cast<double>(grip_logit);
    out.action.v[6] = 1.0 / (1.0 + std::exp(-out.gripper_logit));
    return out;
}

template <typename Scalar>
PolicyForwardResult PolicyNetT<Scalar>::forward(const Params& params,
                                                const KeypointObservation& obs) const {
    PolicyCacheT<Scalar> cache;
    return forward_cached(params, obs, cache);
}

template <typename Scalar>
PolicyForwardResult PolicyNetT<Scalar>::forward_cached(const Params& params,
                                                       const KeypointObservation& obs,
                                                       PolicyCacheT<Scalar>& cache) const {
    const auto norm = normalize_coords(obs.positions, obs.frame_width, obs.frame_height);
    const int n = static_cast<int>(norm.size());
    if (static_cast<int>(obs.ids.size()) != n)
        throw ValidationError("keypoint ids must match positions");
    if (n < 1) throw ValidationError("observation needs at least one keypoint");
    if (n > config_.max_keypoints)
        throw ValidationError("observation exceeds max keypoints");
    for (int id : obs.ids) {
        if (id < 0 || id >= config_.max_keypoints)
            throw ValidationError("keypoint id out of embedding range");
    }

    const int k = config_.max_keypoints;
    const int d = config_.embed_dim;
    const int heads = config_.heads;
    const int dh = d / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    cache.ids.assign(obs.ids.begin(), obs.ids.end());
    cache.active.assign(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) cache.active[i] = 1;
    cache.n_active = n;

    cache.coords = Mat::Zero(k, 2);
    for (int i = 0; i < n; ++i) {
        cache.coords(i, 0) = static_cast<Scalar>(norm[i][0]);
        cache.coords(i, 1) = static_cast<Scalar>(norm[i][1]);
    }
    cache.pre_e = (cache.coords * params.embed_w1.transpose()).rowwise() +
                  params.embed_b1.col(0).transpose();
    cache.act_e = cache.pre_e.unaryExpr([](Scalar v) { return gelu(v); });
    cache.z0 = (cache.act_e * params.embed_w2.transpose()).rowwise() +
               params.embed_b2.col(0).transpose();
    for (int i = 0; i < n; ++i) cache.z0.row(i) += params.id_table.row(cache.ids[i]);
    for (int i = n; i < k; ++i) cache.z0.row(i) = params.id_table.row(config_.max_keypoints);

    Mat x = cache.z0;
    cache.layers.resize(params.layers.size());
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& lp = params.layers[li];
        auto& lc = cache.layers[li];
        lc.x_in = x;
        layer_norm_forward(x, cache.active, lp.ln1_gamma, lp.ln1_beta, lc.xhat1, lc.inv_std1,
                           lc.a);
        lc.q = (lc.a * lp.wq.transpose()).rowwise() + lp.bq.col(0).transpose();
        lc.k = (lc.a * lp.wk.transpose()).rowwise() + lp.bk.col(0).transpose();
        lc.v = (lc.a * lp.wv.transpose()).rowwise() + lp.bv.col(0).transpose();
        lc.ctx.setZero(k, d);
        lc.p.assign(heads, Mat());
        for (int h = 0; h < heads; ++h) {
            auto qh = lc.q.middleCols(h * dh, dh);
            auto kh = lc.k.middleCols(h * dh, dh);
            auto vh = lc.v.middleCols(h * dh, dh);
            Mat s = qh * kh.transpose() * scale;
            for (int j = n; j < k; ++j) s.col(j).setConstant(static_cast<Scalar>(kMaskedLogit));
            Mat p = Mat::Zero(k, k);
            for (int i = 0; i < n; ++i) {
                const Scalar mx = s.row(i).maxCoeff();
                Scalar denom = 0;
                for (int j = 0; j < k; ++j) {
                    const Scalar e = std::exp(s(i, j) - mx);
                    p(i, j) = e;
                    denom += e;
                }
                p.row(i) /= denom;
            }
            lc.ctx.middleCols(h * dh, dh) = p * vh;
            lc.p[h] = std::move(p);
        }
        Mat attn_out = (lc.ctx * lp.wo.transpose()).rowwise() + lp.bo.col(0).transpose();
        zero_inactive_rows(attn_out, cache.active);
        lc.x_mid = x + attn_out;

        layer_norm_forward(lc.x_mid, cache.active, lp.ln2_gamma, lp.ln2_beta, lc.xhat2,
                           lc.inv_std2, lc.b);
        lc.m1_pre = (lc.b * lp.mlp_w1.transpose()).rowwise() + lp.mlp_b1.col(0).transpose();
        lc.m1_act = lc.m1_pre.unaryExpr([](Scalar v) { return gelu(v); });
        Mat m2 = (lc.m1_act * lp.mlp_w2.transpose()).rowwise() + lp.mlp_b2.col(0).transpose();
        zero_inactive_rows(m2, cache.active);
        lc.x_out = lc.x_mid + m2;
        x = lc.x_out;
    }

    layer_norm_forward(x, cache.active, params.final_gamma, params.final_beta, cache.xhat_f,
                       cache.inv_std_f, cache.z);

    // Gate.
    cache.logits = Mat::Zero(k, 1);
    cache.weights = Mat::Zero(k, 1);
    if (config_.gate_frozen_uniform) {
        for (int i = 0; i < n; ++i) cache.weights(i, 0) = Scalar(1) / static_cast<Scalar>(n);
    } else {
        Scalar mx = std::numeric_limits<Scalar>::lowest();
        for (int i = 0; i < n; ++i) {
            cache.logits(i, 0) = cache.z.row(i).dot(params.gate_w.col(0).transpose()) +
                                 params.gate_b(0, 0);
            mx = std::max(mx, cache.logits(i, 0));
        }
        Scalar denom = 0;
        for (int i = 0; i < n; ++i) {
            cache.weights(i, 0) = std::exp(cache.logits(i, 0) - mx);
            denom += cache.weights(i, 0);
        }
        for (int i = 0; i < n; ++i) cache.weights(i, 0) /= denom;
    }
    cache.pooled = cache.z.transpose() * cache.weights;  // d x 1

    // Heads.
    cache.trunk_pre1 = params.trunk_w1 * cache.pooled + params.trunk_b1;
    cache.trunk_act1 = cache.trunk_pre1.unaryExpr([](Scalar v) { return gelu(v); });
    cache.trunk_pre2 = params.trunk_w2 * cache.trunk_act1 + params.trunk_b2;
    cache.trunk_act2 = cache.trunk_pre2.unaryExpr([](Scalar v) { return gelu(v); });
    cache.delta = params.delta_w * cache.trunk_act2 + params.delta_b;
    cache.grip_logit = (params.grip_w * cache.trunk_act2 + params.grip_b)(0, 0);

    PolicyForwardResult out;
    for (int i = 0; i < 6; ++i) out.action.v[i] = static_cast<double>(cache.delta(i, 0));
    out.gripper_logit = static_cast<double>(cache.grip_logit);
    out.action.v[6] = 1.0 / (1.0 + std::exp(-out.gripper_logit));

    out.gating.weights.resize(n);
    for (int i = 0; i < n; ++i) out.gating.weights[i] = static_cast<double>(cache.weights(i, 0));
    out.gating.pooled.resize(d);
    for (int i = 0; i < d; ++i) out.gating.pooled[i] = static_cast<double>(cache.pooled(i, 0));
    const Scalar w0 = cache.weights(0, 0);
    bool all_equal = true;
    for (int i = 1; i < n; ++i) all_equal = all_equal && cache.weights(i, 0) == w0;
    if (all_equal) {
        out.gating.k_eff = static_cast<double>(n);
    } else {
        double s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double w = static_cast<double>(cache.weights(i, 0));
            s2 += w * w;
        }
        out.gating.k_eff = 1.0 / s2;
    }
    return out;
}

template <typename Scalar>
void PolicyNetT<Scalar>::backward(const Params& params, const PolicyCacheT<Scalar>& cache,
                                  const std::array<double, 6>& d_delta, double d_grip_logit,
                                  Params& grads) const {
    const int k = config_.max_keypoints;
    const int d = config_.embed_dim;
    const int heads = config_.heads;
    const int dh = d / heads;
    const int n = cache.n_active;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    // Heads and trunk.
    Mat dd(6, 1);
    for (int i = 0; i < 6; ++i) dd(i, 0) = static_cast<Scalar>(d_delta[i]);
    const Scalar dg = static_cast<Scalar>(d_grip_logit);

    grads.delta_w += dd * cache.trunk_act2.transpose();
    grads.delta_b += dd;
    grads.grip_w += dg * cache.trunk_act2.transpose();
    grads.grip_b(0, 0) += dg;

    Mat d_act2 = params.delta_w.transpose() * dd + params.grip_w.transpose() * dg;
    Mat d_pre2 = d_act2.cwiseProduct(
        cache.trunk_pre2.unaryExpr([](Scalar v) { return gelu_grad(v); }));
    grads.trunk_w2 += d_pre2 * cache.trunk_act1.transpose();
    grads.trunk_b2 += d_pre2;
    Mat d_act1 = params.trunk_w2.transpose() * d_pre2;
    Mat d_pre1 = d_act1.cwiseProduct(
        cache.trunk_pre1.unaryExpr([](Scalar v) { return gelu_grad(v); }));
    grads.trunk_w1 += d_pre1 * cache.pooled.transpose();
    grads.trunk_b1 += d_pre1;
    Mat dh_pool = params.trunk_w1.transpose() * d_pre1;  // d x 1

    // Gate pooling.
    Mat dz = Mat::Zero(k, d);
    if (config_.gate_frozen_uniform) {
        const Scalar w = Scalar(1) / static_cast<Scalar>(n);
        for (int i = 0; i < n; ++i) dz.row(i) = (dh_pool * w).transpose();
    } else {
        Mat dw = Mat::Zero(k, 1);
        for (int i = 0; i < n; ++i) {
            dw(i, 0) = cache.z.row(i).dot(dh_pool.col(0).transpose());
            dz.row(i) = (dh_pool * cache.weights(i, 0)).transpose();
        }
        Scalar mix = 0;
        for (int i = 0; i < n; ++i) mix += cache.weights(i, 0) * dw(i, 0);
        for (int i = 0; i < n; ++i) {
            const Scalar dl = cache.weights(i, 0) * (dw(i, 0) - mix);
            grads.gate_w += dl * cache.z.row(i).transpose();
            grads.gate_b(0, 0) += dl;
            dz.row(i) += dl * params.gate_w.col(0).transpose();
        }
    }

    // Final norm.
    Mat dx = Mat::Zero(k, d);
    layer_norm_backward(dz, cache.xhat_f, cache.inv_std_f, cache.active, params.final_gamma,
                        grads.final_gamma, grads.final_beta, dx);

    // Transformer layers, reversed.
    for (int li = static_cast<int>(params.layers.size()) - 1; li >= 0; --li) {
        const auto& lp = params.layers[li];
        const auto& lc = cache.layers[li];
        auto& lg = grads.layers[li];

        // MLP block: x_out = x_mid + fc2(gelu(fc1(b))).
        Mat d_m2 = dx;  // pad rows already zero
        lg.mlp_b2 += d_m2.colwise().sum().transpose();
        lg.mlp_w2 += d_m2.transpose() * lc.m1_act;
        Mat d_m1act = d_m2 * lp.mlp_w2;
        Mat d_m1pre = d_m1act.cwiseProduct(
            lc.m1_pre.unaryExpr([](Scalar v) { return gelu_grad(v); }));
        lg.mlp_b1 += d_m1pre.colwise().sum().transpose();
        lg.mlp_w1 += d_m1pre.transpose() * lc.b;
        Mat db = d_m1pre * lp.mlp_w1;
        Mat dx_mid = dx;  // residual
        layer_norm_backward(db, lc.xhat2, lc.inv_std2, cache.active, lp.ln2_gamma, lg.ln2_gamma,
                            lg.ln2_beta, dx_mid);

        // Attention block: x_mid = x_in + wo(ctx) (pad rows skipped).
        Mat d_attn = dx_mid;
        lg.bo += d_attn.colwise().sum().transpose();
        lg.wo += d_attn.transpose() * lc.ctx;
        Mat d_ctx = d_attn * lp.wo;
        Mat d_q = Mat::Zero(k, d), d_k = Mat::Zero(k, d), d_v = Mat::Zero(k, d);
        for (int h = 0; h < heads; ++h) {
            const Mat& p = lc.p[h];
            auto vh = lc.v.middleCols(h * dh, dh);
            auto qh = lc.q.middleCols(h * dh, dh);
            auto kh = lc.k.middleCols(h * dh, dh);
            Mat d_ctxh = d_ctx.middleCols(h * dh, dh);
            Mat dp = d_ctxh * vh.transpose();
            d_v.middleCols(h * dh, dh) = p.transpose() * d_ctxh;
            Mat ds = Mat::Zero(k, k);
            for (int i = 0; i < n; ++i) {
                Scalar row_mix = 0;
                for (int j = 0; j < k; ++j) row_mix += dp(i, j) * p(i, j);
                for (int j = 0; j < k; ++j) ds(i, j) = p(i, j) * (dp(i, j) - row_mix);
            }
            d_q.middleCols(h * dh, dh) = ds * kh * scale;
            d_k.middleCols(h * dh, dh) = ds.transpose() * qh * scale;
        }
        lg.bq += d_q.colwise().sum().transpose();
        lg.bk += d_k.colwise().sum().transpose();
        lg.bv += d_v.colwise().sum().transpose();
        lg.wq += d_q.transpose() * lc.a;
        lg.wk += d_k.transpose() * lc.a;
        lg.wv += d_v.transpose() * lc.a;
        Mat da = d_q * lp.wq + d_k * lp.wk + d_v * lp.wv;
        dx = dx_mid;  // residual into x_in
        layer_norm_backward(da, lc.xhat1, lc.inv_std1, cache.active, lp.ln1_gamma, lg.ln1_gamma,
                            lg.ln1_beta, dx);
    }

    // Embedding.
    for (int i = 0; i < n; ++i) grads.id_table.row(cache.ids[i]) += dx.row(i);
    Mat d_e0 = dx;
    grads.embed_b2 += d_e0.colwise().sum().transpose();
    grads.embed_w2 += d_e0.transpose() * cache.act_e;
    Mat d_acte = d_e0 * params.embed_w2;
    Mat d_pree = d_acte.cwiseProduct(
        cache.pre_e.unaryExpr([](Scalar v) { return gelu_grad(v); }));
    grads.embed_b1 += d_pree.colwise().sum().transpose();
    grads.embed_w1 += d_pree.transpose() * cache.coords;
}

// ---- checkpoint io ----

namespace {

using ordered_json = nlohmann::ordered_json;

void put_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (in.gcount() != 4) throw FormatError(std::string("truncated checkpoint at ") + what);
    return v;
}

ordered_json config_to_json(const PolicyConfig& c) {
    ordered_json j;
    j["max_keypoints"] = c.max_keypoints;
    j["embed_dim"] = c.embed_dim;
    j["layers"] = c.layers;
    j["heads"] = c.heads;
    j["mlp_ratio"] = c.mlp_ratio;
    j["action_dim"] = c.action_dim;
    j["gate_frozen_uniform"] = c.gate_frozen_uniform;
    return j;
}

PolicyConfig config_from_json(const ordered_json& j) {
    PolicyConfig c;
    c.max_keypoints = j.at("max_keypoints").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.action_dim = j.at("action_dim").get<int>();
    c.gate_frozen_uniform = j.at("gate_frozen_uniform").get<bool>();
    c.validate();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyConfig& config,
                     const PolicyParams& params, const std::string& extra_json) {
    params.validate(config);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);

    ordered_json meta_obj = ordered_json::object();
    if (!extra_json.empty()) {
        try {
            meta_obj = ordered_json::parse(extra_json);
        } catch (const std::exception& e) {
            throw ValidationError(std::string("checkpoint metadata is not valid JSON: ") +
                                  e.what());
        }
    }
    ordered_json cfg;
    cfg["schema_version"] = 1;
    cfg["policy"] = config_to_json(config);
    cfg["meta"] = meta_obj;
    const std::string cfg_text = cfg.dump();

    out.write("A2PW", 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(cfg_text.size()));
    out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

    auto named = params.tensors();
    put_u32(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& nt : named) {
        put_u32(out, static_cast<std::uint32_t>(nt.name.size()));
        out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        put_u32(out, 2);
        put_u32(out, static_cast<std::uint32_t>(nt.tensor->rows()));
        put_u32(out, static_cast<std::uint32_t>(nt.tensor->cols()));
        for (Eigen::Index r = 0; r < nt.tensor->rows(); ++r) {
            for (Eigen::Index c = 0; c < nt.tensor->cols(); ++c) {
                const float v = (*nt.tensor)(r, c);
                out.write(reinterpret_cast<const char*>(&v), 4);
            }
        }
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

std::pair<PolicyParams, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "A2PW", 4) != 0)
        throw FormatError("bad magic: expected A2PW");
    const std::uint32_t version = get_u32(in, "version");
    if (version != kCheckpointVersion) throw FormatError("unsupported A2PW version");
    const std::uint32_t cfg_len = get_u32(in, "config length");
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), cfg_len);
    if (in.gcount() != static_cast<std::streamsize>(cfg_len))
        throw FormatError("truncated checkpoint config block");

    CheckpointMeta meta;
    ordered_json cfg;
    try {
        cfg = ordered_json::parse(cfg_text);
        meta.config = config_from_json(cfg.at("policy"));
        meta.extra_json = cfg.contains("meta") ? cfg["meta"].dump() : "{}";
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("bad checkpoint config block: ") + e.what());
    }

    PolicyParams params = PolicyParams::zeros(meta.config);
    auto named = params.tensors();
    const std::uint32_t count = get_u32(in, "tensor count");
    if (count != named.size()) throw FormatError("checkpoint tensor count mismatch");
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = get_u32(in, "tensor name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len))
            throw FormatError("truncated tensor name");
        const std::uint32_t rank = get_u32(in, "tensor rank");
        if (rank != 2) throw FormatError("unsupported tensor rank");
        const std::uint32_t rows = get_u32(in, "tensor rows");
        const std::uint32_t cols = get_u32(in, "tensor cols");
        auto it = std::find_if(named.begin(), named.end(),
                               [&](const auto& nt) { return nt.name == name; });
        if (it == named.end()) throw FormatError("unknown tensor in checkpoint: " + name);
        if (static_cast<std::uint32_t>(it->tensor->rows()) != rows ||
            static_cast<std::uint32_t>(it->tensor->cols()) != cols)
            throw FormatError("tensor shape mismatch in checkpoint: " + name);
        for (std::uint32_t r = 0; r < rows; ++r) {
            for (std::uint32_t c = 0; c < cols; ++c) {
                float v = 0;
                in.read(reinterpret_cast<char*>(&v), 4);
                if (in.gcount() != 4) throw FormatError("truncated tensor payload: " + name);
                (*it->tensor)(r, c) = v;
            }
        }
    }
    params.validate(meta.config);
    return {std::move(params), std::move(meta)};
}

template struct PolicyParamsT<float>;
template struct PolicyParamsT<double>;
template class PolicyNetT<float>;
template class PolicyNetT<double>;

}  // namespace a2a
