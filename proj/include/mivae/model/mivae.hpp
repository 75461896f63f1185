#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mivae/diffcore/mlp.hpp"
#include "mivae/diffcore/ops.hpp"
#include "mivae/diffcore/parameters.hpp"
#include "mivae/diffcore/rng.hpp"
#include "mivae/diffcore/tape.hpp"
#include "mivae/errors.hpp"
#include "mivae/model/config.hpp"

namespace mivae::model {

using diff::Linear;
using diff::Mlp;
using diff::ParameterBinder;
using diff::Tensor;
using diff::Var;

inline constexpr double logvar_limit = 10.0;
inline constexpr double logit_limit = 15.0;

// Diagonal Gaussian, one row per instance (or a single row for the bag).
struct GaussianPosterior {
    std::vector<double> mean;
    std::vector<double> logvar;
};

struct PosteriorVar {
    Var mean;
    Var logvar;
};

// All trainable pieces of the model, registered in one ParameterSet.
struct MivaeParams {
    MivaeConfig config;
    diff::ParameterSet params;
    Mlp instance_encoder;  // d -> 2 D_zI
    Mlp bag_encoder;       // d -> 2 D_zB
    Mlp decoder;           // D_zB + D_zI -> d
    Mlp label_prior;       // 1 -> D_zB
    Linear instance_head;  // D_zI -> 1
    Linear bag_head;       // D_zB -> 1
    Linear combiner;       // 2 -> 1

    static MivaeParams create(const MivaeConfig& config, std::uint64_t seed) {
        config.validate();
        MivaeParams m;
        m.config = config;
        Rng rng(derive_seed(seed, "init"));
        const std::vector<std::size_t> hidden(config.hidden_layers, config.hidden_units);
        auto dims = [&](std::size_t in, std::size_t out) {
            std::vector<std::size_t> d{in};
            d.insert(d.end(), hidden.begin(), hidden.end());
            d.push_back(out);
            return d;
        };
        const std::size_t d = config.input_dim, db = config.bag_latent_dim, di = config.instance_latent_dim;
        m.instance_encoder = Mlp::create(m.params, "instance_encoder", dims(d, 2 * di), rng);
        m.bag_encoder = Mlp::create(m.params, "bag_encoder", dims(d, 2 * db), rng);
        m.decoder = Mlp::create(m.params, "decoder", dims(db + di, d), rng);
        m.label_prior = Mlp::create(m.params, "label_prior", dims(1, db), rng);
        m.instance_head = Linear::create(m.params, "instance_head", di, 1, rng);
        m.bag_head = Linear::create(m.params, "bag_head", db, 1, rng);
        m.combiner = Linear::create(m.params, "combiner", 2, 1, rng);
        return m;
    }
};

// Reparameterization noise for one bag: bag row first, then instances row-major.
struct NoiseDraw {
    Tensor bag;        // [1 x D_zB]
    Tensor instances;  // [n x D_zI]
};

inline NoiseDraw draw_noise(const MivaeConfig& config, std::size_t n, Rng& rng) {
    NoiseDraw noise{Tensor::zeros(1, config.bag_latent_dim), Tensor::zeros(n, config.instance_latent_dim)};
    for (double& v : noise.bag.values()) v = rng.normal();
    for (double& v : noise.instances.values()) v = rng.normal();
    return noise;
}

namespace detail {

// mlp_forward with a finiteness check after every layer so a blow-up names its source.
inline Var checked_forward(ParameterBinder& bind, const Mlp& mlp, Var x, const char* name) {
    if (x.cols() != mlp.input_dim()) {
        throw DimensionError(std::string(name) + ": input width " + std::to_string(x.cols()) + ", expected " +
                             std::to_string(mlp.input_dim()));
    }
    Var h = x;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        h = mlp.layers[i](bind, h);
        if (i + 1 < mlp.layers.size()) h = diff::relu(h);
        if (!h.value().all_finite()) {
            throw NumericError(std::string(name) + " layer " + std::to_string(i) + ": non-finite activation");
        }
    }
    return h;
}

inline PosteriorVar split_posterior(Var out, std::size_t dim) {
    return {diff::slice_cols(out, 0, dim),
            diff::clamp(diff::slice_cols(out, dim, 2 * dim), -logvar_limit, logvar_limit)};
}

inline void require_finite(Var v, const char* term) {
    if (!v.value().all_finite()) throw NumericError(std::string("non-finite ") + term);
}

} // namespace detail

// q(z_I | x_j) for every row of x: [n x D_zI] means and logvars.
inline PosteriorVar encode_instance(ParameterBinder& bind, const MivaeParams& m, Var x) {
    return detail::split_posterior(detail::checked_forward(bind, m.instance_encoder, x, "instance_encoder"),
                                   m.config.instance_latent_dim);
}

// Intermediate bag factors, one per instance: [n x D_zB].
inline PosteriorVar encode_intermediate_bag(ParameterBinder& bind, const MivaeParams& m, Var x) {
    return detail::split_posterior(detail::checked_forward(bind, m.bag_encoder, x, "bag_encoder"),
                                   m.config.bag_latent_dim);
}

// Mean of the intermediate means and mean of their variances.
inline PosteriorVar aggregate_bag(const PosteriorVar& intermediate) {
    return {diff::mean_rows(intermediate.mean), diff::log(diff::mean_rows(diff::exp(intermediate.logvar)))};
}

// f_y(y): prior mean of z_B given the bag label (unit variance).
inline Var prior_bag(ParameterBinder& bind, const MivaeParams& m, int y) {
    if (y != 0 && y != 1) throw DomainError("prior_bag: label must be 0 or 1, got " + std::to_string(y));
    Var in = bind.tape().constant(Tensor::scalar(static_cast<double>(y)));
    return detail::checked_forward(bind, m.label_prior, in, "label_prior");
}

inline Var reparameterize(const PosteriorVar& q, const Tensor& eps) {
    Var e = q.mean.tape().constant(eps);
    return diff::add(q.mean, diff::mul(diff::exp(diff::scale(q.logvar, 0.5)), e));
}

// Reconstruction parameters for each instance from (z_B, z_I_j): [n x d].
inline Var decode(ParameterBinder& bind, const MivaeParams& m, Var z_bag, Var z_instances) {
    Var joint = diff::concat_cols(diff::repeat_rows(z_bag, z_instances.rows()), z_instances);
    return detail::checked_forward(bind, m.decoder, joint, "decoder");
}

// Sum over instances and features of log p(x | decoded).
inline Var log_likelihood(Likelihood likelihood, Var x, Var decoded) {
    if (likelihood == Likelihood::gaussian_unit_variance) {
        const double n = static_cast<double>(x.value().size());
        Var sq = diff::sum(diff::square(diff::sub(x, decoded)));
        return diff::add_scalar(diff::scale(sq, -0.5), -0.5 * n * std::log(2.0 * std::numbers::pi));
    }
    Var logits = diff::clamp(decoded, -logit_limit, logit_limit);
    return diff::sub(diff::sum(diff::mul(x, logits)), diff::sum(diff::softplus(logits)));
}

// KL(q || N(prior_mean, prior_var I)) summed over all entries.
inline Var kl_to_prior(const PosteriorVar& q, Var prior_mean, double prior_var = 1.0) {
    if (!(prior_var > 0.0)) throw DomainError("kl_to_prior: prior variance must be positive");
    Var var = diff::exp(q.logvar);
    Var diff2 = diff::square(diff::sub(q.mean, prior_mean));
    Var t = diff::scale(diff::add(var, diff2), 1.0 / prior_var);
    t = diff::sub(t, q.logvar);
    t = diff::add_scalar(t, std::log(prior_var) - 1.0);
    return diff::scale(diff::sum(t), 0.5);
}

inline Var kl_to_standard_normal(const PosteriorVar& q) {
    return kl_to_prior(q, q.mean.tape().constant(Tensor::scalar(0.0)), 1.0);
}

// Clamped like every other logit, which keeps scores strictly inside (0, 1).
inline Var instance_logits(ParameterBinder& bind, const MivaeParams& m, Var z_instances) {
    return diff::clamp(m.instance_head(bind, z_instances), -logit_limit, logit_limit);
}

// Logit of q(y=1 | z_B, f_I) where f_I is the max instance score, given as a logit.
inline Var classifier_logit(ParameterBinder& bind, const MivaeParams& m, Var z_bag, Var pooled_logit) {
    Var bag_logit = diff::clamp(m.bag_head(bind, z_bag), -logit_limit, logit_limit);
    Var inst_logit = diff::clamp(pooled_logit, -logit_limit, logit_limit);
    Var out = m.combiner(bind, diff::concat_cols(bag_logit, inst_logit));
    return diff::clamp(out, -logit_limit, logit_limit);
}

// Per-bag objective terms, all scalars on the bag's tape.
struct BagObjective {
    Var reconstruction;
    Var kl_bag;
    Var kl_instances;
    Var elbo;
    Var log_q;
    Var loss;
};

inline BagObjective bag_objective(ParameterBinder& bind, const MivaeParams& m, const Tensor& x, int y,
                                  const NoiseDraw& noise) {
    if (x.cols() != m.config.input_dim) {
        throw DimensionError("bag has " + std::to_string(x.cols()) + " features, model expects " +
                             std::to_string(m.config.input_dim));
    }
    if (noise.instances.rows() != x.rows() || noise.instances.cols() != m.config.instance_latent_dim ||
        noise.bag.cols() != m.config.bag_latent_dim) {
        throw DimensionError("noise draw does not match bag of " + std::to_string(x.rows()) + " instances");
    }
    diff::Tape& tape = bind.tape();
    Var xv = tape.constant(x);

    PosteriorVar q_inst = encode_instance(bind, m, xv);
    PosteriorVar q_bag = aggregate_bag(encode_intermediate_bag(bind, m, xv));
    Var z_bag = reparameterize(q_bag, noise.bag);
    Var z_inst = reparameterize(q_inst, noise.instances);

    BagObjective o;
    o.reconstruction = log_likelihood(m.config.likelihood, xv, decode(bind, m, z_bag, z_inst));
    detail::require_finite(o.reconstruction, "reconstruction term");
    o.kl_bag = kl_to_prior(q_bag, prior_bag(bind, m, y));
    detail::require_finite(o.kl_bag, "bag KL term");
    o.kl_instances = kl_to_standard_normal(q_inst);
    detail::require_finite(o.kl_instances, "instance KL term");
    o.elbo = diff::sub(diff::sub(o.reconstruction, o.kl_bag), o.kl_instances);

    Var logit = classifier_logit(bind, m, z_bag, diff::max_all(instance_logits(bind, m, z_inst)));
    // log sigmoid(l) = -softplus(-l); log(1 - sigmoid(l)) = -softplus(l)
    o.log_q = diff::scale(diff::softplus(y == 1 ? diff::scale(logit, -1.0) : logit), -1.0);
    o.loss = diff::scale(diff::add(o.elbo, diff::scale(o.log_q, m.config.alpha)), -1.0);
    detail::require_finite(o.loss, "loss");
    return o;
}

struct ElboParts {
    double reconstruction = 0;
    double kl_bag = 0;
    double kl_instances = 0;
    double elbo = 0;
    double log_q = 0;
    double loss = 0;
};

inline ElboParts evaluate_objective(const MivaeParams& m, const Tensor& x, int y, const NoiseDraw& noise) {
    diff::Tape tape(false);
    ParameterBinder bind(tape, m.params);
    const BagObjective o = bag_objective(bind, m, x, y, noise);
    return {o.reconstruction.value().item(), o.kl_bag.value().item(), o.kl_instances.value().item(),
            o.elbo.value().item(), o.log_q.value().item(), o.loss.value().item()};
}

inline ElboParts elbo(const MivaeParams& m, const Tensor& x, int y, Rng& rng) {
    return evaluate_objective(m, x, y, draw_noise(m.config, x.rows(), rng));
}

inline double loss(const MivaeParams& m, const Tensor& x, int y, const NoiseDraw& noise) {
    return evaluate_objective(m, x, y, noise).loss;
}

inline double loss(const MivaeParams& m, const Tensor& x, int y, Rng& rng) {
    return loss(m, x, y, draw_noise(m.config, x.rows(), rng));
}

// Adds d(scale * loss)/d(params) into the parameter gradients and returns the loss.
inline double accumulate_gradients(MivaeParams& m, const Tensor& x, int y, const NoiseDraw& noise,
                                   double scale = 1.0) {
    diff::Tape tape;
    ParameterBinder bind(tape, m.params);
    const BagObjective o = bag_objective(bind, m, x, y, noise);
    tape.backward(o.loss, scale);
    return o.loss.value().item();
}

// ---- prediction: posterior means, no sampling ----

namespace detail {

inline std::vector<double> row_vector(const Tensor& t, std::size_t r) {
    auto s = t.row_span(r);
    return {s.begin(), s.end()};
}

} // namespace detail

inline std::vector<GaussianPosterior> encode_instance(const MivaeParams& m, const Tensor& x) {
    diff::Tape tape(false);
    ParameterBinder bind(tape, m.params);
    PosteriorVar q = encode_instance(bind, m, tape.constant(x));
    std::vector<GaussianPosterior> out;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        out.push_back({detail::row_vector(q.mean.value(), r), detail::row_vector(q.logvar.value(), r)});
    }
    return out;
}

inline std::vector<GaussianPosterior> encode_intermediate_bag(const MivaeParams& m, const Tensor& x) {
    diff::Tape tape(false);
    ParameterBinder bind(tape, m.params);
    PosteriorVar q = encode_intermediate_bag(bind, m, tape.constant(x));
    std::vector<GaussianPosterior> out;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        out.push_back({detail::row_vector(q.mean.value(), r), detail::row_vector(q.logvar.value(), r)});
    }
    return out;
}

inline GaussianPosterior aggregate_bag(const std::vector<GaussianPosterior>& intermediates) {
    if (intermediates.empty()) throw ContractError("aggregate_bag: no intermediate factors");
    const std::size_t dim = intermediates.front().mean.size();
    Tensor mean = Tensor::zeros(intermediates.size(), dim), logvar = Tensor::zeros(intermediates.size(), dim);
    for (std::size_t r = 0; r < intermediates.size(); ++r) {
        if (intermediates[r].mean.size() != dim || intermediates[r].logvar.size() != dim) {
            throw DimensionError("aggregate_bag: intermediate factors differ in dimension");
        }
        for (std::size_t k = 0; k < dim; ++k) {
            mean(r, k) = intermediates[r].mean[k];
            logvar(r, k) = intermediates[r].logvar[k];
        }
    }
    diff::Tape tape(false);
    PosteriorVar q = aggregate_bag(PosteriorVar{tape.constant(mean), tape.constant(logvar)});
    return {detail::row_vector(q.mean.value(), 0), detail::row_vector(q.logvar.value(), 0)};
}

inline std::vector<double> prior_bag(const MivaeParams& m, int y) {
    diff::Tape tape(false);
    ParameterBinder bind(tape, m.params);
    return detail::row_vector(prior_bag(bind, m, y).value(), 0);
}

inline double kl_to_prior(const GaussianPosterior& q, const std::vector<double>& prior_mean, double prior_var = 1.0) {
    if (q.mean.size() != q.logvar.size() || q.mean.size() != prior_mean.size()) {
        throw DimensionError("kl_to_prior: dimensions differ");
    }
    diff::Tape tape(false);
    PosteriorVar qv{tape.constant(Tensor::row(q.mean)), tape.constant(Tensor::row(q.logvar))};
    return kl_to_prior(qv, tape.constant(Tensor::row(prior_mean)), prior_var).value().item();
}

inline double instance_score(const MivaeParams& m, const std::vector<double>& z_instance) {
    diff::Tape tape(false);
    ParameterBinder bind(tape, m.params);
    return diff::stable_sigmoid(instance_logits(bind, m, tape.constant(Tensor::row(z_instance))).value().item());
}

inline double pool_max(const std::vector<double>& scores) {
    if (scores.empty()) throw ContractError("pool_max: no scores");
    double best = scores.front();
    for (double s : scores) best = std::max(best, s);
    return best;
}

inline double logit_of(double p) {
    if (p <= 0.0) return -logit_limit;
    if (p >= 1.0) return logit_limit;
    return std::clamp(std::log(p) - std::log1p(-p), -logit_limit, logit_limit);
}

inline double bag_classifier(const MivaeParams& m, const std::vector<double>& z_bag, double f_instance) {
    diff::Tape tape(false);
    ParameterBinder bind(tape, m.params);
    Var l = classifier_logit(bind, m, tape.constant(Tensor::row(z_bag)), tape.constant(Tensor::scalar(logit_of(f_instance))));
    return diff::stable_sigmoid(l.value().item());
}

struct BagPrediction {
    double probability = 0;
    std::vector<double> instance_scores;
};

inline BagPrediction predict(const MivaeParams& m, const Tensor& x) {
    if (x.cols() != m.config.input_dim) {
        throw DimensionError("bag has " + std::to_string(x.cols()) + " features, model expects " +
                             std::to_string(m.config.input_dim));
    }
    diff::Tape tape(false);
    ParameterBinder bind(tape, m.params);
    Var xv = tape.constant(x);
    Var logits = instance_logits(bind, m, encode_instance(bind, m, xv).mean);
    Var z_bag = aggregate_bag(encode_intermediate_bag(bind, m, xv)).mean;
    BagPrediction out;
    out.probability = diff::stable_sigmoid(classifier_logit(bind, m, z_bag, diff::max_all(logits)).value().item());
    for (double l : logits.value().values()) out.instance_scores.push_back(diff::stable_sigmoid(l));
    return out;
}

inline std::vector<double> predict_instances(const MivaeParams& m, const Tensor& x) {
    return predict(m, x).instance_scores;
}

inline double predict_bag(const MivaeParams& m, const Tensor& x) { return predict(m, x).probability; }

} // namespace mivae::model
