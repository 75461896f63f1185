#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "mivae/data/bag_csv.hpp"
#include "mivae/data/folds.hpp"
#include "mivae/data/standardize.hpp"
#include "mivae/data/synthetic.hpp"

using namespace mivae;
using namespace mivae::data;

#ifndef MIVAE_DATA_DIR
#define MIVAE_DATA_DIR "data"
#endif

namespace {

MilDataset parse(const std::string& text) {
    std::istringstream in(text);
    return read_bag_csv(in, "inline.csv");
}

// Bags with random sizes and values; labels alternate, instance labels optional.
MilDataset random_dataset(std::size_t m, std::size_t d, std::uint64_t seed, bool instance_labels) {
    Rng rng(seed);
    MilDataset ds;
    ds.feature_dim = d;
    for (std::size_t i = 0; i < m; ++i) {
        Bag b;
        b.id = "b" + std::to_string(i);
        b.label = static_cast<int>(i % 2);
        const std::size_t n = rng.uniform_index(1, 6);
        b.instances = diff::Tensor::zeros(n, d);
        for (double& v : b.instances.values()) v = rng.normal() * std::pow(10.0, rng.uniform_index(0, 8) - 4.0);
        if (instance_labels) {
            std::vector<int> l(n, 0);
            if (b.label == 1) l[rng.uniform_index(0, n - 1)] = 1;
            b.instance_labels = l;
        }
        ds.bags.push_back(std::move(b));
    }
    return ds;
}

MilDataset labelled_dataset(std::size_t positives, std::size_t negatives) {
    MilDataset ds;
    ds.feature_dim = 1;
    for (std::size_t i = 0; i < positives + negatives; ++i) {
        Bag b;
        b.id = "bag" + std::to_string(i);
        b.label = i < positives ? 1 : 0;
        b.instances = diff::Tensor::matrix(1, 1, {static_cast<double>(i)});
        ds.bags.push_back(std::move(b));
    }
    return ds;
}

} // namespace

TEST(BagCsv, TwoRowsOneBag) {
    const auto ds = parse("bag_id,label,instance_label,f0,f1\nA,1,,0.5,1\nA,1,,2,-3e-2\n");
    ASSERT_EQ(ds.size(), 1u);
    EXPECT_EQ(ds.feature_dim, 2u);
    EXPECT_EQ(ds.bags[0].size(), 2u);
    EXPECT_FALSE(ds.bags[0].instance_labels.has_value());
    EXPECT_DOUBLE_EQ(ds.bags[0].instances(1, 1), -0.03);
}

TEST(BagCsv, RowsGroupedByBagKeepFileOrder) {
    const auto ds = parse("bag_id,label,instance_label,f0\nA,0,0,1\nB,1,1,2\nA,0,0,3\nB,1,0,4\n");
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.bags[0].id, "A");
    EXPECT_EQ(ds.bags[0].instances[1], 3.0);
    EXPECT_EQ(*ds.bags[1].instance_labels, (std::vector<int>{1, 0}));
}

TEST(BagCsv, ConflictingLabelsNameTheBag) {
    try {
        parse("bag_id,label,instance_label,f0\nmol7,0,,1\nmol7,1,,2\n");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("mol7"), std::string::npos);
    }
}

TEST(BagCsv, RaggedRowReportsLine) {
    try {
        parse("bag_id,label,instance_label,f0,f1\nA,1,,1,2\nA,1,,3\n");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(BagCsv, NonNumericFeatureReportsLine) {
    try {
        parse("bag_id,label,instance_label,f0\nA,1,,1\nA,1,,abc\n");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_NE(std::string(e.what()).find("abc"), std::string::npos);
    }
}

TEST(BagCsv, RejectsBadHeaderAndInvariantViolations) {
    EXPECT_THROW(parse("id,label,instance_label,f0\nA,1,,1\n"), ParseError);
    EXPECT_THROW(parse("bag_id,label,instance_label,x\nA,1,,1\n"), ParseError);
    EXPECT_THROW(parse("bag_id,label,instance_label,f0\nA,2,,1\n"), ParseError);
    // negative bag with a positive instance
    EXPECT_THROW(parse("bag_id,label,instance_label,f0\nA,0,1,1\n"), DataError);
    // instance labels on only part of a bag
    EXPECT_THROW(parse("bag_id,label,instance_label,f0\nA,1,1,1\nA,1,,2\n"), DataError);
    EXPECT_THROW(parse("bag_id,label,instance_label,f0\n"), DataError);
    EXPECT_THROW(load_bag_csv("/nonexistent/file.csv"), DataError);
}

TEST(BagCsv, Musk1HasPublishedShape) {
    const auto ds = load_bag_csv(std::string(MIVAE_DATA_DIR) + "/musk1.csv");
    EXPECT_EQ(ds.size(), 92u);
    EXPECT_EQ(ds.feature_dim, 166u);
    EXPECT_EQ(ds.instance_count(), 476u);
    EXPECT_EQ(ds.positive_bags(), 47u);
}

TEST(BagCsv, WriteThenReadIsIdentity) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const MilDataset ds = random_dataset(7, 3, seed, seed % 2 == 0);
        std::stringstream buf;
        write_bag_csv(ds, buf);
        const MilDataset back = read_bag_csv(buf);
        ASSERT_EQ(back.size(), ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            EXPECT_EQ(back.bags[i].id, ds.bags[i].id);
            EXPECT_EQ(back.bags[i].label, ds.bags[i].label);
            EXPECT_EQ(back.bags[i].instances, ds.bags[i].instances);
            EXPECT_EQ(back.bags[i].instance_labels, ds.bags[i].instance_labels);
        }
    }
}

TEST(Standardize, ConstantFeatureIsOnlyCentered) {
    const auto ds = parse("bag_id,label,instance_label,f0,f1\nA,1,,5,1\nA,1,,5,3\n");
    const auto out = standardize(ds);
    EXPECT_EQ(out.train.bags[0].instances(0, 0), 0.0);
    EXPECT_EQ(out.train.bags[0].instances(1, 0), 0.0);
    EXPECT_EQ(out.train.bags[0].instances(0, 1), -1.0);
    EXPECT_EQ(out.train.bags[0].instances(1, 1), 1.0);
}

TEST(Standardize, HeldOutUsesTrainStatistics) {
    const auto train = parse("bag_id,label,instance_label,f0\nA,1,,1\nB,0,,3\n");
    const auto test = parse("bag_id,label,instance_label,f0\nC,1,,10\nC,1,,-4\n");
    std::vector<MilDataset> others{test};
    const auto out = standardize(train, others);
    EXPECT_DOUBLE_EQ(out.scaler.mean[0], 2.0);
    EXPECT_DOUBLE_EQ(out.scaler.std[0], 1.0);
    EXPECT_DOUBLE_EQ(out.others[0].bags[0].instances[0], (10.0 - 2.0) / 1.0);
    EXPECT_DOUBLE_EQ(out.others[0].bags[0].instances[1], (-4.0 - 2.0) / 1.0);
}

TEST(Standardize, TrainFeaturesHaveZeroMeanUnitStd) {
    const MilDataset ds = random_dataset(15, 4, 3, false);
    const auto out = standardize(ds);
    const FeatureScaler again = FeatureScaler::fit(out.train);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_NEAR(again.mean[k], 0.0, 1e-12);
        EXPECT_NEAR(again.std[k], 1.0, 1e-12);
    }
}

TEST(Standardize, EmptyTrainingSetRejected) {
    MilDataset empty;
    empty.feature_dim = 3;
    EXPECT_THROW(standardize(empty), DataError);
}

TEST(FoldPlan, TenBagsTenFoldsGivesSingletonTests) {
    const auto ds = labelled_dataset(5, 5);
    const auto plan = make_fold_plan(ds, 10, 1, 42);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(plan.split(0, k).test.size(), 1u);
}

TEST(FoldPlan, StratifiedHundredBags) {
    const auto ds = labelled_dataset(50, 50);
    const auto plan = make_fold_plan(ds, 10, 3, 7);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t k = 0; k < 10; ++k) {
            const auto& test = plan.split(r, k).test;
            const auto pos = std::count_if(test.begin(), test.end(), [&](const auto& id) { return ds.find(id).label == 1; });
            EXPECT_GE(pos, 4);
            EXPECT_LE(pos, 6);
        }
    }
}

TEST(FoldPlan, DeterministicGivenSeed) {
    const auto ds = labelled_dataset(13, 21);
    EXPECT_EQ(make_fold_plan(ds, 5, 2, 99), make_fold_plan(ds, 5, 2, 99));
    EXPECT_FALSE(make_fold_plan(ds, 5, 2, 99) == make_fold_plan(ds, 5, 2, 100));
}

TEST(FoldPlan, TooManyFoldsIsConfigError) {
    EXPECT_THROW(make_fold_plan(labelled_dataset(2, 2), 5, 1, 0), ConfigError);
    EXPECT_THROW(make_fold_plan(labelled_dataset(2, 2), 1, 1, 0), ConfigError);
}

TEST(FoldPlan, InvariantsHoldOverRandomDatasets) {
    Rng rng(1234);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t pos = rng.uniform_index(2, 60);
        const std::size_t neg = rng.uniform_index(2, 60);
        const auto ds = labelled_dataset(pos, neg);
        const std::size_t folds = rng.uniform_index(2, std::min<std::size_t>(10, pos + neg));
        const auto plan = make_fold_plan(ds, folds, 2, rng.uniform_index(0, 1000));
        const double global = static_cast<double>(pos) / static_cast<double>(pos + neg);
        for (std::size_t r = 0; r < plan.repeats; ++r) {
            std::multiset<std::string> covered;
            for (std::size_t k = 0; k < folds; ++k) {
                const FoldSplit& s = plan.split(r, k);
                covered.insert(s.test.begin(), s.test.end());
                const std::set<std::string> test(s.test.begin(), s.test.end());
                for (const auto& id : s.validation) EXPECT_FALSE(test.contains(id));
                for (const auto& id : s.train) EXPECT_FALSE(test.contains(id));
                const std::size_t n_train = s.train.size() + s.validation.size();
                EXPECT_EQ(n_train + s.test.size(), ds.size());
                const auto expected_val = std::clamp<long long>(std::llround(0.1 * static_cast<double>(n_train)), 1,
                                                                static_cast<long long>(n_train) - 1);
                EXPECT_EQ(static_cast<long long>(s.validation.size()), expected_val);
                const auto n_pos = std::count_if(s.test.begin(), s.test.end(),
                                                 [&](const auto& id) { return ds.find(id).label == 1; });
                EXPECT_LE(std::abs(static_cast<double>(n_pos) - global * static_cast<double>(s.test.size())), 1.0)
                    << "pos=" << pos << " neg=" << neg << " folds=" << folds;
            }
            // test sets partition the bags
            EXPECT_EQ(covered.size(), ds.size());
            EXPECT_EQ(std::set<std::string>(covered.begin(), covered.end()).size(), ds.size());
        }
    }
}

TEST(FoldPlan, AuditFileRoundTrip) {
    const auto ds = labelled_dataset(8, 9);
    const auto plan = make_fold_plan(ds, 4, 2, 5);
    std::stringstream buf;
    write_fold_plan(plan, buf);
    EXPECT_EQ(read_fold_plan(buf), plan);
}

TEST(Synthetic, NoiselessSharedFactorGivesIdenticalInstances) {
    SyntheticSpec spec;
    spec.num_bags = 10;
    spec.feature_dim = 3;
    spec.bag_latent_dim = 3;
    spec.instance_latent_dim = 2;
    spec.noise = 0.0;
    spec.bag_loading = diff::Tensor::identity(3);
    spec.instance_loading = diff::Tensor::zeros(3, 2);
    spec.positivity_direction = {1.0, 0.0};
    const auto ds = sample_synthetic(spec, 3);
    for (const Bag& b : ds.bags) {
        for (std::size_t j = 1; j < b.size(); ++j) {
            for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(b.instances(j, k), b.instances(0, k));
        }
    }
}

TEST(Synthetic, BagLabelIsOrOfInstanceLabels) {
    SyntheticSpec spec = with_random_loadings(SyntheticSpec{}, 5);
    spec.num_bags = 300;
    const auto ds = sample_synthetic(spec, 17);
    std::size_t positives = 0;
    for (const Bag& b : ds.bags) {
        const auto& l = *b.instance_labels;
        EXPECT_EQ(b.label, std::any_of(l.begin(), l.end(), [](int v) { return v == 1; }) ? 1 : 0);
        positives += b.label;
    }
    EXPECT_GT(positives, 100u);
    EXPECT_LT(positives, 200u);
}

TEST(Synthetic, ReproducibleBitwise) {
    const SyntheticSpec spec = with_random_loadings(SyntheticSpec{}, 5);
    const auto a = sample_synthetic(spec, 8);
    const auto b = sample_synthetic(spec, 8);
    std::stringstream sa, sb;
    write_bag_csv(a, sa);
    write_bag_csv(b, sb);
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(Synthetic, LargeOffsetSeparatesBagMeans) {
    SyntheticSpec spec;
    spec.num_bags = 400;
    spec.feature_dim = 8;
    spec.class_offset = {-3.0, 3.0};
    spec = with_random_loadings(spec, 21);
    const auto ds = sample_synthetic(spec, 22);

    // Least-squares separator on instance means, targets +-1.
    Eigen::MatrixXd X(ds.size(), spec.feature_dim + 1);
    Eigen::VectorXd t(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Bag& b = ds.bags[i];
        X(i, spec.feature_dim) = 1.0;
        for (std::size_t k = 0; k < spec.feature_dim; ++k) {
            double m = 0;
            for (std::size_t j = 0; j < b.size(); ++j) m += b.instances(j, k);
            X(i, k) = m / static_cast<double>(b.size());
        }
        t(i) = b.label == 1 ? 1.0 : -1.0;
    }
    const Eigen::VectorXd w = X.colPivHouseholderQr().solve(t);
    const Eigen::VectorXd pred = X * w;
    std::size_t errors = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) errors += (pred(i) > 0) != (t(i) > 0);
    EXPECT_LT(static_cast<double>(errors) / static_cast<double>(ds.size()), 0.05);
}

TEST(Synthetic, InfeasibleThresholdIsReported) {
    SyntheticSpec spec = with_random_loadings(SyntheticSpec{}, 1);
    spec.threshold = 50.0;  // no positive instance can ever be drawn
    EXPECT_THROW(sample_synthetic(spec, 1), InfeasibleSpecError);
    spec.threshold = -50.0;  // no negative instance can ever be drawn
    EXPECT_THROW(sample_synthetic(spec, 1), InfeasibleSpecError);
}

TEST(Synthetic, SpecDimensionsValidated) {
    SyntheticSpec spec = with_random_loadings(SyntheticSpec{}, 1);
    spec.positivity_direction.pop_back();
    EXPECT_THROW(sample_synthetic(spec, 1), DimensionError);
    spec = with_random_loadings(SyntheticSpec{}, 1);
    spec.min_instances = 0;
    EXPECT_THROW(sample_synthetic(spec, 1), ConfigError);
}
