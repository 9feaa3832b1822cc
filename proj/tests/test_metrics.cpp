#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "caro/metrics.hpp"

using namespace caro;
using Catch::Approx;

namespace {

// Independent kappa oracle: recomputes observed and chance agreement
// from scratch, sharing no code with the implementation.
double kappa_reference(const std::vector<std::vector<long>>& counts) {
    double n = 0.0;
    for (const auto& row : counts)
        for (long c : row) n += static_cast<double>(c);
    double po = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) po += static_cast<double>(counts[i][i]);
    po /= n;
    double pe = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        double row = 0.0, col = 0.0;
        for (std::size_t j = 0; j < counts.size(); ++j) {
            row += static_cast<double>(counts[i][j]);
            col += static_cast<double>(counts[j][i]);
        }
        pe += (row / n) * (col / n);
    }
    if (pe >= 1.0) return 0.0;
    return (po - pe) / (1.0 - pe);
}

ConfusionMatrix three_class_matrix() {
    return ConfusionMatrix::from_counts({{6, 25, 7}, {0, 9, 10}, {0, 0, 7}});
}

ConfusionMatrix collapse_matrix() {
    return ConfusionMatrix::from_counts({{2, 1, 0, 0, 1},
                                         {7, 41, 0, 0, 0},
                                         {1, 24, 0, 0, 0},
                                         {0, 8, 2, 0, 0},
                                         {0, 1, 0, 0, 0}});
}

ConfusionMatrix repaired_matrix() {
    return ConfusionMatrix::from_counts({{2, 1, 0, 0, 1},
                                         {3, 40, 5, 0, 0},
                                         {0, 4, 21, 0, 0},
                                         {0, 0, 9, 1, 0},
                                         {0, 0, 1, 0, 0}});
}

}  // namespace

TEST_CASE("accuracy on fixture matrices") {
    ConfusionMatrix identity = ConfusionMatrix::from_counts({{10, 0, 0}, {0, 10, 0}, {0, 0, 10}});
    CHECK(accuracy(identity) == 1.0);

    CHECK(accuracy(three_class_matrix()) == Approx(0.34375).margin(1e-12));
    CHECK(accuracy(collapse_matrix()) == Approx(0.49).margin(0.005));
    CHECK(accuracy(repaired_matrix()) == Approx(0.73).margin(0.005));
}

TEST_CASE("accuracy rejects an empty matrix") {
    ConfusionMatrix empty(ScoreScale(3));
    CHECK_THROWS_AS(accuracy(empty), Error);
    CHECK_THROWS_AS(cohen_kappa(empty), Error);
}

TEST_CASE("kappa on fixture matrices") {
    ConfusionMatrix identity = ConfusionMatrix::from_counts({{5, 0}, {0, 7}});
    CHECK(cohen_kappa(identity) == 1.0);

    // p_o = 22/64, p_e = (38*6 + 19*34 + 7*24)/64^2
    double po = 22.0 / 64.0;
    double pe = (38.0 * 6.0 + 19.0 * 34.0 + 7.0 * 24.0) / (64.0 * 64.0);
    CHECK(cohen_kappa(three_class_matrix()) == Approx((po - pe) / (1 - pe)).margin(1e-12));
    CHECK(cohen_kappa(three_class_matrix()) == Approx(0.1198).margin(5e-4));

    CHECK(cohen_kappa(collapse_matrix()) == Approx(0.02).margin(0.01));
    CHECK(cohen_kappa(repaired_matrix()) == Approx(0.55).margin(0.01));
}

TEST_CASE("kappa degenerates to 0 when chance agreement is total") {
    ConfusionMatrix single = ConfusionMatrix::from_counts({{12, 0}, {0, 0}});
    CHECK(cohen_kappa(single) == 0.0);
    ConfusionMatrix off = ConfusionMatrix::from_counts({{0, 9}, {0, 0}});
    CHECK(cohen_kappa(off) == 0.0);  // rows {9,0}, cols {0,9}: pe = 0 ... po = 0
}

TEST_CASE("kappa matches the brute-force oracle on 1000 random matrices") {
    Rng rng(20240601);
    for (int trial = 0; trial < 1000; ++trial) {
        int k = 2 + static_cast<int>(rng.bounded(4));
        std::vector<std::vector<long>> counts(static_cast<std::size_t>(k),
                                              std::vector<long>(static_cast<std::size_t>(k), 0));
        long total = 0;
        for (auto& row : counts)
            for (auto& c : row) {
                c = static_cast<long>(rng.bounded(51));
                total += c;
            }
        if (total == 0) counts[0][0] = 1;
        ConfusionMatrix m = ConfusionMatrix::from_counts(counts);
        double got = cohen_kappa(m);
        double want = kappa_reference(counts);
        CHECK(std::fabs(got - want) <= 1e-12);
        CHECK(got >= -1.0 - 1e-12);
        CHECK(got <= 1.0 + 1e-12);
        CHECK(accuracy(m) >= 0.0);
        CHECK(accuracy(m) <= 1.0);
    }
}

TEST_CASE("perfect diagonal matrices always have kappa 1") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        int k = 2 + static_cast<int>(rng.bounded(4));
        ConfusionMatrix m{ScoreScale(k)};
        for (int i = 0; i < k; ++i) m.at(i, i) = 1 + static_cast<long>(rng.bounded(50));
        CHECK(cohen_kappa(m) == 1.0);
    }
}

TEST_CASE("misconfidence worked examples") {
    // Correct prediction at probability 1.0: zero after clamping.
    ClassDistribution sure(std::vector<double>{1.0, 0.0, 0.0});
    CHECK(misconfidence(sure, 0, 0) >= 0.0);
    CHECK(misconfidence(sure, 0, 0) <= 1.1e-6);

    // Correct prediction at 0.8: -ln 0.8.
    ClassDistribution p8(std::vector<double>{0.8, 0.1, 0.1});
    CHECK(misconfidence(p8, 0, 0) == Approx(0.2231435513142097).margin(1e-9));

    // Wrong prediction, p(pred)=0.6, p(true)=0.3: |ln 0.6 / ln 0.3|.
    ClassDistribution wrong(std::vector<double>{0.6, 0.3, 0.1});
    CHECK(misconfidence(wrong, 0, 1) == Approx(0.424283357506555).margin(1e-9));
}

TEST_CASE("misconfidence is monotone in the correct-prediction probability") {
    double previous = 1e18;
    for (double p = 0.05; p < 1.0; p += 0.05) {
        ClassDistribution dist(std::vector<double>{p, 1.0 - p});
        double m = misconfidence(dist, 0, 0);
        CHECK(m < previous);
        previous = m;
    }
}

TEST_CASE("misconfidence ignores classes other than predicted and true") {
    ClassDistribution a(std::vector<double>{0.5, 0.3, 0.15, 0.05});
    ClassDistribution b(std::vector<double>{0.5, 0.3, 0.05, 0.15});
    CHECK(misconfidence(a, 0, 1) == misconfidence(b, 0, 1));
    CHECK(misconfidence(a, 0, 0) == misconfidence(b, 0, 0));
}

TEST_CASE("misconfidence clamping removes singularities") {
    // True-class probability 1.0 would divide by log(1) without clamping.
    ClassDistribution degenerate(std::vector<double>{0.0, 1.0});
    double m = misconfidence(degenerate, 0, 1);
    CHECK(std::isfinite(m));
    CHECK(m >= 0.0);
    // Predicted probability 0 would be log(0).
    CHECK(std::isfinite(misconfidence(degenerate, 0, 0)));
}

TEST_CASE("min_max_normalize worked examples") {
    auto close = [](const std::vector<double>& got, const std::vector<double>& want) {
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == Approx(want[i]).margin(1e-12));
    };
    close(min_max_normalize({0.2, 0.5, 0.8}), {0.0, 0.5, 1.0});
    close(min_max_normalize({0.4, 0.4, 0.4}), {0.5, 0.5, 0.5});
    close(min_max_normalize({0.1, 0.3}), {0.0, 1.0});
    CHECK_THROWS_AS(min_max_normalize({}), Error);
}

TEST_CASE("class distribution argmax breaks ties toward the lowest index") {
    ClassDistribution tie(std::vector<double>{0.4, 0.4, 0.2});
    CHECK(tie.argmax() == 0);
    ClassDistribution tail(std::vector<double>{0.2, 0.4, 0.4});
    CHECK(tail.argmax() == 1);
}

TEST_CASE("one-hot distribution keeps the misconfidence of correct predictions near epsilon") {
    auto dist = ClassDistribution::one_hot(4, 2);
    CHECK(dist.sums_to_one());
    CHECK(dist.argmax() == 2);
    CHECK(misconfidence(dist, 2, 2) == Approx(-std::log(1.0 - 1e-6)).margin(1e-15));
}

TEST_CASE("renormalize clamps negatives and rescales") {
    ClassDistribution d(std::vector<double>{2.0, -1.0, 2.0});
    d.renormalize();
    CHECK(d.sums_to_one());
    CHECK(d.probs[0] == Approx(0.5));
    CHECK(d.probs[1] == 0.0);

    ClassDistribution zero(std::vector<double>{0.0, 0.0});
    zero.renormalize();
    CHECK(zero.probs[0] == Approx(0.5));
}

TEST_CASE("score scale rejects fewer than two classes") {
    CHECK_THROWS_AS(ScoreScale(1), Error);
    CHECK(ScoreScale(5).labels() == std::vector<int>{0, 1, 2, 3, 4});
}
