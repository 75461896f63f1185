#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "mivae/model/checkpoint.hpp"
#include "mivae/model/mivae.hpp"
#include "oracles.hpp"

using namespace mivae;
using namespace mivae::model;
using diff::Tensor;

namespace {

MivaeConfig small_config(std::size_t d = 3) {
    MivaeConfig c;
    c.input_dim = d;
    c.bag_latent_dim = 2;
    c.instance_latent_dim = 2;
    c.hidden_layers = 1;
    c.hidden_units = 4;
    c.alpha = 1.0;
    return c;
}

void zero_all(MivaeParams& m) {
    for (auto& p : m.params) p.value.fill(0.0);
}

void set_param(MivaeParams& m, const std::string& name, std::vector<double> values) {
    auto& p = m.params[m.params.index_of(name)];
    p.value = Tensor(p.value.shape(), std::move(values));
}

} // namespace

TEST(Encoder, ZeroWeightsGiveStandardNormal) {
    auto m = MivaeParams::create(small_config(), 1);
    zero_all(m);
    Rng rng(2);
    const Tensor x = mivae::testing::random_bag(3, 3, rng);
    for (const auto& q : encode_instance(m, x)) {
        for (double v : q.mean) EXPECT_EQ(v, 0.0);
        for (double v : q.logvar) EXPECT_EQ(v, 0.0);
    }
    for (const auto& q : encode_intermediate_bag(m, x)) {
        for (double v : q.mean) EXPECT_EQ(v, 0.0);
        for (double v : q.logvar) EXPECT_EQ(v, 0.0);
    }
}

TEST(Encoder, OneHiddenLayerMatchesHandArithmetic) {
    MivaeConfig c = small_config(2);
    c.instance_latent_dim = 1;
    c.hidden_units = 2;
    auto m = MivaeParams::create(c, 1);
    set_param(m, "instance_encoder.0.weight", {1, 0, 0, 1});
    set_param(m, "instance_encoder.0.bias", {0.5, 0.5});
    set_param(m, "instance_encoder.1.weight", {2, 3, 4, 5});
    set_param(m, "instance_encoder.1.bias", {0.1, -0.2});
    // h = relu([1, -2] + 0.5) = [1.5, 0]; out = [1.5*2 + 0.1, 1.5*3 - 0.2]
    const auto q = encode_instance(m, Tensor::matrix(1, 2, {1.0, -2.0}));
    EXPECT_DOUBLE_EQ(q[0].mean[0], 3.1);
    EXPECT_DOUBLE_EQ(q[0].logvar[0], 4.3);
}

TEST(Encoder, OutputDimensionIndependentOfBagSize) {
    auto m = MivaeParams::create(small_config(), 1);
    Rng rng(3);
    for (std::size_t n : {1u, 4u, 9u}) {
        const auto q = encode_instance(m, mivae::testing::random_bag(n, 3, rng));
        ASSERT_EQ(q.size(), n);
        for (const auto& p : q) EXPECT_EQ(p.mean.size(), 2u);
    }
}

TEST(Encoder, LogvarIsClamped) {
    auto m = MivaeParams::create(small_config(1), 1);
    zero_all(m);
    set_param(m, "instance_encoder.1.bias", {0.0, 0.0, 50.0, -50.0});
    const auto q = encode_instance(m, Tensor::matrix(1, 1, {0.3}));
    EXPECT_EQ(q[0].logvar[0], 10.0);
    EXPECT_EQ(q[0].logvar[1], -10.0);
}

TEST(Encoder, NonFiniteActivationNamesLayer) {
    auto m = MivaeParams::create(small_config(1), 1);
    set_param(m, "bag_encoder.0.weight", {1e308, 1e308, 1e308, 1e308});
    try {
        encode_intermediate_bag(m, Tensor::matrix(1, 1, {1e10}));
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("bag_encoder layer 0"), std::string::npos) << e.what();
    }
}

TEST(Encoder, IntermediateFactorsDeterministicPerInstance) {
    auto m = MivaeParams::create(small_config(), 4);
    const Tensor x = Tensor::matrix(3, 3, {1, 2, 3, 1, 2, 3, -1, 0, 2});
    const auto q = encode_intermediate_bag(m, x);
    EXPECT_EQ(q[0].mean, q[1].mean);
    EXPECT_EQ(q[0].logvar, q[1].logvar);
    EXPECT_NE(q[0].mean, q[2].mean);
}

TEST(Aggregate, SingleInstanceIsIdentity) {
    const GaussianPosterior q{{0.3, -1.2}, {0.5, -2.0}};
    const auto a = aggregate_bag({q});
    EXPECT_DOUBLE_EQ(a.mean[0], 0.3);
    EXPECT_DOUBLE_EQ(a.mean[1], -1.2);
    EXPECT_NEAR(a.logvar[0], 0.5, 1e-15);
    EXPECT_NEAR(a.logvar[1], -2.0, 1e-15);
}

TEST(Aggregate, MeanOfMeansAndMeanOfVariances) {
    const auto a = aggregate_bag({{{1.0}, {0.0}}, {{3.0}, {std::log(3.0)}}});
    EXPECT_DOUBLE_EQ(a.mean[0], 2.0);
    EXPECT_NEAR(a.logvar[0], std::log(2.0), 1e-15);
    EXPECT_THROW(aggregate_bag(std::vector<GaussianPosterior>{}), ContractError);
}

TEST(Prior, ZeroWeightsGiveStandardNormalForBothLabels) {
    auto m = MivaeParams::create(small_config(), 1);
    zero_all(m);
    EXPECT_EQ(prior_bag(m, 0), std::vector<double>(2, 0.0));
    EXPECT_EQ(prior_bag(m, 1), std::vector<double>(2, 0.0));
    EXPECT_THROW(prior_bag(m, 2), DomainError);
}

TEST(Reparameterize, ClampedVarianceSampleSitsOnMean) {
    // sd at the clamp is exp(-5) ~ 0.0067, so 0.01 covers ~86% of draws; 4 sd covers all but ~6e-5
    diff::Tape tape;
    Rng rng(5);
    const double sd = std::exp(-5.0);
    int within = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        PosteriorVar q{tape.constant(Tensor::scalar(1.5)), tape.constant(Tensor::scalar(-10.0))};
        const double z = reparameterize(q, Tensor::scalar(rng.normal())).value().item();
        EXPECT_NEAR(z, 1.5, 4.5 * sd);
        within += std::abs(z - 1.5) < 0.01;
    }
    EXPECT_NEAR(static_cast<double>(within) / draws, std::erf(0.01 / sd / std::sqrt(2.0)), 0.01);
}

TEST(Reparameterize, MonteCarloMeanMatchesPosterior) {
    const double mu = -0.7, logvar = std::log(2.5);
    Rng rng(6);
    const std::size_t n = 100000;
    double total = 0;
    diff::Tape tape(false);
    Tensor eps = Tensor::zeros(n, 1);
    for (double& v : eps.values()) v = rng.normal();
    Var qm = tape.constant(Tensor(Tensor::zeros(n, 1).shape(), mu));
    Var ql = tape.constant(Tensor(Tensor::zeros(n, 1).shape(), logvar));
    for (double z : reparameterize({qm, ql}, eps).value().values()) total += z;
    EXPECT_NEAR(total / n, mu, 3.0 * std::sqrt(2.5 / n));
}

TEST(Reparameterize, GradientToMeanIsOne) {
    diff::Tape tape;
    Var mean = tape.variable(Tensor::matrix(1, 3, {0.1, 0.2, 0.3}));
    Var logvar = tape.variable(Tensor::matrix(1, 3, {0.0, -1.0, 1.0}));
    tape.backward(diff::sum(reparameterize({mean, logvar}, Tensor::matrix(1, 3, {0.5, -1.0, 2.0}))));
    for (double g : tape.grad(mean).values()) EXPECT_EQ(g, 1.0);
    // d/dlogvar of exp(lv/2) eps = 0.5 exp(lv/2) eps
    EXPECT_DOUBLE_EQ(tape.grad(logvar)[2], 0.5 * std::exp(0.5) * 2.0);
}

TEST(Decoder, ShapeDeterminismAndGaussianDensity) {
    auto m = MivaeParams::create(small_config(3), 7);
    diff::Tape tape(false);
    diff::ParameterBinder bind(tape, std::as_const(m).params);
    Var zb = tape.constant(Tensor::matrix(1, 2, {0.4, -0.3}));
    Var zi = tape.constant(Tensor::matrix(2, 2, {1.0, 0.5, -0.5, 0.2}));
    const Tensor a = decode(bind, m, zb, zi).value();
    const Tensor b = decode(bind, m, zb, zi).value();
    EXPECT_EQ(a.rows(), 2u);
    EXPECT_EQ(a.cols(), 3u);
    EXPECT_EQ(a, b);

    const Tensor x = Tensor::matrix(2, 3, {0.1, 0.2, 0.3, -1.0, 2.0, 0.0});
    double expected = 0;
    for (std::size_t r = 0; r < 2; ++r) {
        double sq = 0;
        for (std::size_t k = 0; k < 3; ++k) sq += (x(r, k) - a(r, k)) * (x(r, k) - a(r, k));
        expected += -0.5 * sq - 1.5 * std::log(2 * std::numbers::pi);
    }
    const double got = log_likelihood(Likelihood::gaussian_unit_variance, tape.constant(x), tape.constant(a)).value().item();
    EXPECT_NEAR(got, expected, 1e-12);
}

TEST(Decoder, BernoulliLogLikelihood) {
    diff::Tape tape(false);
    const Tensor x = Tensor::matrix(1, 3, {1, 0, 1});
    const Tensor l = Tensor::matrix(1, 3, {0.3, -2.0, 40.0});
    double expected = std::log(1 / (1 + std::exp(-0.3))) + std::log(1 - 1 / (1 + std::exp(2.0))) +
                      std::log(1 / (1 + std::exp(-15.0)));  // logit clamped
    EXPECT_NEAR(log_likelihood(Likelihood::bernoulli, tape.constant(x), tape.constant(l)).value().item(), expected,
                1e-12);
}

TEST(Kl, StandardNormalToItselfIsZero) { EXPECT_EQ(kl_to_prior({{0.0}, {0.0}}, {0.0}), 0.0); }

TEST(Kl, UnitShiftMatchesQuadrature) {
    const double oracle = mivae::testing::quadrature_kl(1.0, 1.0, 0.0, 1.0);
    EXPECT_NEAR(oracle, 0.5, 1e-10);
    EXPECT_NEAR(kl_to_prior({{1.0}, {0.0}}, {0.0}), oracle, 1e-8);
}

TEST(Kl, WiderPosteriorMatchesQuadrature) {
    const double oracle = mivae::testing::quadrature_kl(0.0, 4.0, 0.0, 1.0);
    EXPECT_NEAR(kl_to_prior({{0.0}, {std::log(4.0)}}, {0.0}), oracle, 1e-8);
    EXPECT_NEAR(oracle, 0.8069, 1e-4);
}

TEST(Kl, RandomTriplesMatchQuadratureAndAreNonNegative) {
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
        const double mu = 4 * rng.normal(), lv = 3 * rng.normal(), m = 4 * rng.normal();
        const double pv = std::exp(rng.normal());
        const double closed = kl_to_prior({{mu}, {lv}}, {m}, pv);
        EXPECT_GE(closed, 0.0);
        EXPECT_NEAR(closed, mivae::testing::quadrature_kl(mu, std::exp(lv), m, pv), 1e-6) << mu << ' ' << lv << ' ' << m;
    }
}

TEST(Heads, ZeroWeightsGiveHalf) {
    auto m = MivaeParams::create(small_config(), 1);
    zero_all(m);
    EXPECT_EQ(instance_score(m, {3.0, -1.0}), 0.5);
    EXPECT_EQ(bag_classifier(m, {1.0, 2.0}, 0.9), 0.5);
}

TEST(Heads, InstanceScoreStaysInsideUnitInterval) {
    auto m = MivaeParams::create(small_config(), 1);
    Rng rng(9);
    for (int i = 0; i < 100; ++i) {
        const double s = instance_score(m, {100 * rng.normal(), 100 * rng.normal()});
        EXPECT_GT(s, 0.0);
        EXPECT_LT(s, 1.0);
    }
}

TEST(Heads, PoolMax) {
    EXPECT_EQ(pool_max({0.2, 0.9, 0.1}), 0.9);
    EXPECT_EQ(pool_max({0.4}), 0.4);
    EXPECT_EQ(pool_max({0.1, 0.2, 0.9}), 0.9);
    EXPECT_THROW(pool_max({}), ContractError);
}

TEST(Heads, ClassifierIncreasesWithInstanceScore) {
    auto m = MivaeParams::create(small_config(), 1);
    set_param(m, "combiner.weight", {0.3, 1.2});
    EXPECT_LT(bag_classifier(m, {0.5, 0.5}, 0.1), bag_classifier(m, {0.5, 0.5}, 0.9));
}

TEST(Objective, KlTermsNonNegativeAndElboDecomposes) {
    Rng rng(10);
    for (int i = 0; i < 50; ++i) {
        auto m = MivaeParams::create(mivae::testing::random_small_config(rng), i);
        const Tensor x = mivae::testing::random_bag(rng.uniform_index(1, 5), m.config.input_dim, rng);
        const auto p = elbo(m, x, i % 2, rng);
        EXPECT_GE(p.kl_bag, 0.0);
        EXPECT_GE(p.kl_instances, 0.0);
        EXPECT_DOUBLE_EQ(p.elbo, p.reconstruction - p.kl_bag - p.kl_instances);
    }
}

TEST(Objective, AlphaZeroLossIsMinusElbo) {
    MivaeConfig c = small_config();
    c.alpha = 0.0;
    auto m = MivaeParams::create(c, 2);
    Rng rng(11);
    const Tensor x = mivae::testing::random_bag(4, 3, rng);
    const NoiseDraw noise = draw_noise(c, 4, rng);
    const auto p = evaluate_objective(m, x, 1, noise);
    EXPECT_EQ(p.loss, -p.elbo);
}

TEST(Objective, ElboBelowImportanceSampledLogLikelihood) {
    MivaeConfig c;
    c.input_dim = 2;
    c.bag_latent_dim = 1;
    c.instance_latent_dim = 1;
    c.hidden_layers = 1;
    c.hidden_units = 3;
    auto m = MivaeParams::create(c, 12);
    const Tensor x = Tensor::matrix(2, 2, {0.5, -0.2, 1.0, 0.3});
    const int y = 1;
    const auto qi = encode_instance(m, x);
    const auto qb = aggregate_bag(encode_intermediate_bag(m, x));
    const double prior_mean = prior_bag(m, y)[0];
    auto log_normal = [](double v, double mean, double var) {
        return -0.5 * std::log(2 * std::numbers::pi * var) - (v - mean) * (v - mean) / (2 * var);
    };

    Rng rng(13);
    const std::size_t samples = 10000;
    std::vector<double> log_w(samples);
    diff::Tape tape(false);
    diff::ParameterBinder bind(tape, std::as_const(m).params);
    for (std::size_t s = 0; s < samples; ++s) {
        const double vb = std::exp(qb.logvar[0]);
        const double zb = qb.mean[0] + std::sqrt(vb) * rng.normal();
        double lw = log_normal(zb, prior_mean, 1.0) - log_normal(zb, qb.mean[0], vb);
        Tensor zi = Tensor::zeros(2, 1);
        for (std::size_t j = 0; j < 2; ++j) {
            const double vi = std::exp(qi[j].logvar[0]);
            zi[j] = qi[j].mean[0] + std::sqrt(vi) * rng.normal();
            lw += log_normal(zi[j], 0.0, 1.0) - log_normal(zi[j], qi[j].mean[0], vi);
        }
        const Tensor rec = decode(bind, m, tape.constant(Tensor::scalar(zb)), tape.constant(zi)).value();
        for (std::size_t j = 0; j < 2; ++j) {
            for (std::size_t k = 0; k < 2; ++k) lw += log_normal(x(j, k), rec(j, k), 1.0);
        }
        log_w[s] = lw;
    }
    const double top = *std::max_element(log_w.begin(), log_w.end());
    double acc = 0;
    for (double v : log_w) acc += std::exp(v - top);
    const double log_px = top + std::log(acc / samples);

    double mean_elbo = 0, sq = 0;
    const int draws = 5000;
    for (int i = 0; i < draws; ++i) {
        const double e = elbo(m, x, y, rng).elbo;
        mean_elbo += e;
        sq += e * e;
    }
    mean_elbo /= draws;
    const double se = std::sqrt((sq / draws - mean_elbo * mean_elbo) / draws);
    EXPECT_LE(mean_elbo, log_px + 3 * se) << "elbo " << mean_elbo << " log p " << log_px;
}

TEST(Objective, GradientMatchesFiniteDifferencesOnSmallBag) {
    auto m = MivaeParams::create(small_config(3), 14);
    Rng rng(15);
    mivae::testing::jitter_parameters(m, rng);
    const Tensor x = mivae::testing::random_bag(2, 3, rng);
    const NoiseDraw noise = draw_noise(m.config, 2, rng);
    const auto report = mivae::testing::full_model_gradcheck(m, x, 1, noise);
    EXPECT_EQ(report.entries, m.params.scalar_count());
    EXPECT_LT(report.worst, 1e-4);
}

TEST(Objective, GradientMatchesFiniteDifferencesOnRandomConfigs) {
    Rng rng(16);
    for (int trial = 0; trial < 30; ++trial) {
        auto m = MivaeParams::create(mivae::testing::random_small_config(rng), 100 + trial);
        mivae::testing::jitter_parameters(m, rng);
        Tensor x = mivae::testing::random_bag(rng.uniform_index(1, 3), m.config.input_dim, rng);
        if (m.config.likelihood == Likelihood::bernoulli) {
            for (double& v : x.values()) v = v > 0 ? 1.0 : 0.0;
        }
        const NoiseDraw noise = draw_noise(m.config, x.rows(), rng);
        EXPECT_LT(mivae::testing::full_model_gradcheck(m, x, trial % 2, noise).worst, 1e-4) << "trial " << trial;
    }
}

TEST(Objective, LossFiniteWhenClassifierSaturates) {
    auto m = MivaeParams::create(small_config(), 17);
    set_param(m, "combiner.bias", {1e6});
    Rng rng(18);
    const Tensor x = mivae::testing::random_bag(3, 3, rng);
    EXPECT_TRUE(std::isfinite(loss(m, x, 0, rng)));
    EXPECT_TRUE(std::isfinite(loss(m, x, 1, rng)));
}

TEST(Objective, RejectsWrongFeatureCount) {
    auto m = MivaeParams::create(small_config(3), 1);
    Rng rng(1);
    EXPECT_THROW(loss(m, mivae::testing::random_bag(2, 4, rng), 1, rng), DimensionError);
}

TEST(Predict, DeterministicAndPermutationEquivariant) {
    auto m = MivaeParams::create(small_config(), 19);
    Rng rng(20);
    const Tensor x = mivae::testing::random_bag(5, 3, rng);
    const auto a = predict_instances(m, x);
    EXPECT_EQ(a, predict_instances(m, x));
    EXPECT_EQ(predict_bag(m, x), predict_bag(m, x));

    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    const auto b = predict_instances(m, mivae::testing::permute_rows(x, perm));
    for (std::size_t r = 0; r < perm.size(); ++r) EXPECT_EQ(b[r], a[perm[r]]);
}

TEST(Predict, InstanceScoreIndependentOfBagmates) {
    auto m = MivaeParams::create(small_config(), 21);
    Rng rng(22);
    const Tensor x = mivae::testing::random_bag(4, 3, rng);
    const auto together = predict_instances(m, x);
    for (std::size_t r = 0; r < 4; ++r) {
        const auto alone = predict_instances(m, Tensor::row(x.row_span(r)));
        EXPECT_EQ(alone[0], together[r]);
    }
}

TEST(Predict, BagProbabilityUsesMaxInstanceScore) {
    auto m = MivaeParams::create(small_config(), 23);
    Rng rng(24);
    const Tensor x = mivae::testing::random_bag(4, 3, rng);
    const auto scores = predict_instances(m, x);
    const auto zb = aggregate_bag(encode_intermediate_bag(m, x)).mean;
    EXPECT_NEAR(predict_bag(m, x), bag_classifier(m, zb, pool_max(scores)), 1e-12);
}

TEST(Permutation, LossPredictionAndAggregateInvariant) {
    Rng rng(25);
    for (int i = 0; i < 200; ++i) {
        auto m = MivaeParams::create(mivae::testing::random_small_config(rng), i);
        const Tensor x = mivae::testing::random_bag(rng.uniform_index(1, 8), m.config.input_dim, rng);
        const auto gap = mivae::testing::permutation_gap(m, x, i % 2, rng);
        EXPECT_LE(gap.loss, 1e-12);
        EXPECT_LE(gap.predict_bag, 1e-12);
        EXPECT_LE(gap.aggregate, 1e-12);
    }
}

TEST(Params, EveryTensorRegisteredOnce) {
    auto m = MivaeParams::create(small_config(), 1);
    std::set<std::string> names;
    for (const auto& p : m.params) EXPECT_TRUE(names.insert(p.name).second);
    // 3 MLPs with 2 layers + prior MLP with 2 layers + 3 linear heads, weight and bias each
    EXPECT_EQ(m.params.size(), 2u * (4 * 2 + 3));
}

TEST(Checkpoint, RoundTripIsExact) {
    auto m = MivaeParams::create(small_config(), 26);
    Rng rng(27);
    diff::AdamW opt(m.params, {});
    m.params.zero_grad();
    accumulate_gradients(m, mivae::testing::random_bag(3, 3, rng), 1, draw_noise(m.config, 3, rng));
    opt.step(m.params);
    data::FeatureScaler scaler{{1.0, 2.0, 3.0}, {0.5, 1.5, 1e-3}};

    const auto path = std::filesystem::temp_directory_path() / "mivae_ckpt_test.json";
    save_checkpoint({m, opt, rng.state(), scaler}, path);
    const Checkpoint back = load_checkpoint(path);
    std::filesystem::remove(path);
    EXPECT_EQ(back.model.config, m.config);
    for (std::size_t i = 0; i < m.params.size(); ++i) EXPECT_EQ(back.model.params[i].value, m.params[i].value);
    ASSERT_TRUE(back.optimizer.has_value());
    EXPECT_EQ(back.optimizer->step_count(), 1u);
    EXPECT_EQ(back.optimizer->second_moments()[0], opt.second_moments()[0]);
    EXPECT_EQ(Rng::from_state(*back.rng_state), rng);
    EXPECT_EQ(back.scaler->std, scaler.std);
    Tensor x = mivae::testing::random_bag(2, 3, rng);
    EXPECT_EQ(predict_bag(back.model, x), predict_bag(m, x));
}

TEST(Checkpoint, RejectsMismatchedDimensions) {
    auto m = MivaeParams::create(small_config(3), 1);
    auto j = checkpoint_to_json({m, {}, {}, {}});
    j["config"]["input_dim"] = 4;
    EXPECT_THROW(checkpoint_from_json(j), DimensionError);
    j = checkpoint_to_json({m, {}, {}, {}});
    j["config"]["instance_latent_dim"] = 3;
    EXPECT_THROW(checkpoint_from_json(j), DimensionError);
    EXPECT_THROW(require_input_dim(m.config, 5), DimensionError);
    j = checkpoint_to_json({m, {}, {}, {}});
    j["format"] = "other";
    EXPECT_THROW(checkpoint_from_json(j), DataError);
}
