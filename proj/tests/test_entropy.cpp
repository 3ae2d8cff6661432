#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "luq/entropy.hpp"
#include "luq/rng.hpp"

using namespace luq;

namespace {

Mat random_tokens(int64_t m, int64_t d, uint64_t seed) {
    Rng rng(seed);
    Mat x(m, d);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < d; ++j)
            x(i, j) = static_cast<float>(rng.gaussian());
    return x;
}

ActivationSet acts_from_mats(const std::vector<Mat>& per_layer) {
    ActivationSet a;
    for (const auto& m : per_layer) a.acts.push_back({m});
    return a;
}

// exhaustive discordant pair counting
double kendall_oracle(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    size_t n = a.size();
    std::vector<int64_t> pos_a(n), pos_b(n);
    for (size_t i = 0; i < n; ++i) {
        pos_a[static_cast<size_t>(a[i])] = static_cast<int64_t>(i);
        pos_b[static_cast<size_t>(b[i])] = static_cast<int64_t>(i);
    }
    int64_t disc = 0, total = 0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            ++total;
            bool oa = pos_a[i] < pos_a[j];
            bool ob = pos_b[i] < pos_b[j];
            if (oa != ob) ++disc;
        }
    return static_cast<double>(disc) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("pool_tokens flattens [N_seqs, N, d] row-major") {
    ActivationSet a;
    Mat s0 = random_tokens(8, 16, 1), s1 = random_tokens(8, 16, 2);
    a.acts.push_back({s0, s1});
    Mat pooled = pool_tokens(a, 0);
    REQUIRE(pooled.rows() == 16);
    REQUIRE(pooled.cols() == 16);
    CHECK((pooled.topRows(8) - s0).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((pooled.bottomRows(8) - s1).cwiseAbs().maxCoeff() == 0.0f);
    CHECK_THROWS_AS(pool_tokens(a, 1), ValidationError);
}

TEST_CASE("pool_tokens single token is that token") {
    ActivationSet a;
    Mat s = random_tokens(1, 4, 3);
    a.acts.push_back({s});
    Mat pooled = pool_tokens(a, 0);
    REQUIRE(pooled.rows() == 1);
    CHECK((pooled - s).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("kmeans K=1 centroid is the token mean") {
    Mat x = random_tokens(50, 8, 4);
    ClusterModel m = kmeans_fit(x, 1, 0);
    Mat mean = x.colwise().mean();
    CHECK((m.centroids.row(0) - mean.row(0)).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("kmeans recovers two well-separated blobs") {
    Rng rng(5);
    Mat x(200, 4);
    for (int64_t i = 0; i < 200; ++i) {
        float c = i < 100 ? 10.0f : -10.0f;
        x(i, 0) = c + 0.1f * static_cast<float>(rng.gaussian());
        for (int64_t j = 1; j < 4; ++j)
            x(i, j) = 0.1f * static_cast<float>(rng.gaussian());
    }
    ClusterModel m = kmeans_fit(x, 2, 9);
    float c0 = m.centroids(0, 0), c1 = m.centroids(1, 0);
    if (c0 < c1) std::swap(c0, c1);
    CHECK(std::abs(c0 - 10.0f) < 0.1f);
    CHECK(std::abs(c1 + 10.0f) < 0.1f);
}

TEST_CASE("kmeans K=M reaches zero inertia") {
    Mat x = random_tokens(12, 4, 8);
    ClusterModel m = kmeans_fit(x, 12, 3);
    CHECK(m.inertia <= 1e-8);
}

TEST_CASE("kmeans rejects M < K") {
    Mat x = random_tokens(3, 4, 8);
    CHECK_THROWS_AS(kmeans_fit(x, 4, 0), ValidationError);
}

TEST_CASE("kmeans is deterministic per seed") {
    Mat x = random_tokens(100, 6, 12);
    ClusterModel a = kmeans_fit(x, 7, 42);
    ClusterModel b = kmeans_fit(x, 7, 42);
    CHECK((a.centroids - b.centroids).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("assign: exact centroid hit and tie-break to lowest index") {
    ClusterModel m;
    m.k = 5;
    m.centroids = Mat::Zero(5, 2);
    for (int64_t i = 0; i < 5; ++i) m.centroids(i, 0) = static_cast<float>(i);

    Mat probe(2, 2);
    probe << 3.0f, 0.0f,   // exactly centroid 3
             1.5f, 0.0f;   // equidistant from centroids 1 and 2
    auto ids = assign(m, probe);
    CHECK(ids[0] == 3);
    CHECK(ids[1] == 1);
}

TEST_CASE("assign matches a brute-force nearest-centroid oracle") {
    Mat x = random_tokens(300, 5, 31);
    ClusterModel m = kmeans_fit(x, 11, 7);
    auto ids = assign(m, x);
    for (int64_t i = 0; i < x.rows(); ++i) {
        float best = std::numeric_limits<float>::max();
        int64_t best_id = -1;
        for (int64_t k = 0; k < m.k; ++k) {
            float d2 = (x.row(i) - m.centroids.row(k)).squaredNorm();
            if (d2 < best) {
                best = d2;
                best_id = k;
            }
        }
        CHECK(ids[static_cast<size_t>(i)] == best_id);
    }
}

TEST_CASE("empirical_distribution basics") {
    auto p = empirical_distribution({0, 0, 1, 1}, 2);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

    auto q = empirical_distribution({2, 2, 2}, 5);
    CHECK(q[2] == 1.0);
    CHECK(q[0] == 0.0);

    CHECK_THROWS_AS(empirical_distribution({}, 3), ValidationError);
}

TEST_CASE("empirical_distribution matches an independent histogram count") {
    Rng rng(77);
    std::vector<int64_t> ids;
    for (int i = 0; i < 997; ++i) ids.push_back(static_cast<int64_t>(rng.bounded(13)));
    auto p = empirical_distribution(ids, 13);
    std::map<int64_t, int64_t> hist;
    for (int64_t id : ids) hist[id]++;
    double sum = 0;
    for (int64_t k = 0; k < 13; ++k) {
        double expect = static_cast<double>(hist[k]) / 997.0;
        CHECK(p[static_cast<size_t>(k)] == expect);  // same division, bit-for-bit
        sum += p[static_cast<size_t>(k)];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("shannon_entropy exact values") {
    CHECK(shannon_entropy({1.0}) == 0.0);
    CHECK(shannon_entropy({0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    std::vector<double> u(100, 0.01);
    CHECK(shannon_entropy(u) == doctest::Approx(std::log(100.0)).epsilon(1e-12));
    CHECK(shannon_entropy({1.0, 0.0, 0.0}) == 0.0);  // 0 log 0 = 0
}

TEST_CASE("shannon_entropy validates its input") {
    CHECK_THROWS_AS(shannon_entropy({0.5, 0.6}), ValidationError);
    CHECK_THROWS_AS(shannon_entropy({-0.1, 1.1}), ValidationError);
}

TEST_CASE("entropy is invariant under permutation of P") {
    std::vector<double> p = {0.1, 0.2, 0.3, 0.4};
    std::vector<double> q = {0.4, 0.1, 0.3, 0.2};
    CHECK(shannon_entropy(p) == shannon_entropy(q));
}

TEST_CASE("merging two clusters never increases entropy") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        int k = 3 + static_cast<int>(rng.bounded(8));
        std::vector<double> p(static_cast<size_t>(k));
        double s = 0;
        for (auto& v : p) {
            v = rng.uniform() + 1e-3;
            s += v;
        }
        for (auto& v : p) v /= s;
        double before = shannon_entropy(p);
        // merge the two smallest
        std::sort(p.begin(), p.end());
        p[1] += p[0];
        p.erase(p.begin());
        CHECK(shannon_entropy(p) <= before + 1e-12);
    }
}

TEST_CASE("ascending order with ties to the lower index") {
    CHECK(ascending_order({3.0, 1.0, 2.0}) == std::vector<int64_t>{1, 2, 0});
    CHECK(ascending_order({2.0, 2.0, 2.0}) == std::vector<int64_t>{0, 1, 2});
}

TEST_CASE("layer_entropy_profile sorts by entropy and is seed-stable") {
    // layer 0: single repeated token (H = 0); layer 1: diverse tokens
    Mat dup = Mat::Zero(64, 4);
    Mat diverse = random_tokens(64, 4, 15);
    ActivationSet a = acts_from_mats({diverse, dup});
    EntropyProfile p = layer_entropy_profile(a, 8, 3);
    REQUIRE(p.h.size() == 2);
    CHECK(p.h[1] == 0.0);
    CHECK(p.h[0] > 0.0);
    CHECK(p.pi == std::vector<int64_t>{1, 0});
    CHECK(p.h[0] <= std::log(8.0) + 1e-12);

    EntropyProfile q = layer_entropy_profile(a, 8, 3);
    CHECK(p.h == q.h);
    CHECK(p.pi == q.pi);
}

TEST_CASE("identical activations at every layer give identity pi") {
    Mat x = random_tokens(32, 4, 20);
    ActivationSet a = acts_from_mats({x, x, x});
    EntropyProfile p = layer_entropy_profile(a, 4, 5);
    CHECK(p.h[0] == p.h[1]);
    CHECK(p.h[1] == p.h[2]);
    CHECK(p.pi == std::vector<int64_t>{0, 1, 2});
}

TEST_CASE("kendall_distance basics") {
    CHECK(kendall_distance({0, 1, 2, 3}, {0, 1, 2, 3}) == 0.0);
    CHECK(kendall_distance({0, 1, 2, 3}, {3, 2, 1, 0}) == 1.0);
    CHECK(kendall_distance({0, 1, 2, 3}, {1, 0, 2, 3}) ==
          doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK_THROWS_AS(kendall_distance({0, 1}, {0, 1, 2}), ValidationError);
}

TEST_CASE("kendall_distance matches exhaustive pair counting for all n <= 6") {
    for (int n = 2; n <= 6; ++n) {
        std::vector<int64_t> id(static_cast<size_t>(n));
        std::iota(id.begin(), id.end(), 0);
        std::vector<int64_t> perm = id;
        do {
            CHECK(kendall_distance(id, perm) == kendall_oracle(id, perm));
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
}

TEST_CASE("kendall_distance is symmetric and satisfies the triangle inequality") {
    Rng rng(33);
    for (int trial = 0; trial < 60; ++trial) {
        int n = 3 + static_cast<int>(rng.bounded(5));  // n <= 7
        std::vector<int64_t> a(static_cast<size_t>(n)), b, c;
        std::iota(a.begin(), a.end(), 0);
        b = a;
        c = a;
        rng.shuffle(b);
        rng.shuffle(c);
        double ab = kendall_distance(a, b), ba = kendall_distance(b, a);
        double ac = kendall_distance(a, c), cb = kendall_distance(c, b);
        CHECK(ab == ba);
        CHECK(ab <= ac + cb + 1e-12);
        CHECK(kendall_distance(a, a) == 0.0);
    }
}

TEST_CASE("rank_stability_curve rejects tiny grids") {
    Mat x = random_tokens(64, 4, 2);
    ActivationSet a = acts_from_mats({x, random_tokens(64, 4, 3)});
    CHECK_THROWS_WITH_AS(rank_stability_curve(a, {10}, 0),
                         doctest::Contains("grid too small"), ValidationError);
}

TEST_CASE("two distinct token values saturate the ordering immediately") {
    // exactly 2 distinct activation vectors per layer
    Mat x(64, 4);
    for (int64_t i = 0; i < 64; ++i)
        for (int64_t j = 0; j < 4; ++j)
            x(i, j) = (i % 2 == 0) ? 1.0f : -1.0f;
    Mat y = 2.0f * x;
    ActivationSet a = acts_from_mats({x, y});
    StabilityCurve c = rank_stability_curve(a, {2, 4, 8, 16}, 1);
    for (double d : c.distances) CHECK(d == 0.0);
}

TEST_CASE("kneedle_elbow finds the knee of the specified synthetic curve") {
    std::vector<double> xs = {10, 20, 30, 40, 50, 60};
    std::vector<double> ys = {1.0, 0.45, 0.20, 0.12, 0.10, 0.09};
    KneedleResult r = kneedle_elbow(xs, ys);
    CHECK(r.knee_found);
    CHECK(r.x == 30.0);
}

TEST_CASE("kneedle_elbow on a linear curve reports no knee") {
    std::vector<double> xs = {1, 2, 3, 4};
    std::vector<double> ys = {4, 3, 2, 1};
    KneedleResult r = kneedle_elbow(xs, ys);
    CHECK_FALSE(r.knee_found);
    CHECK(r.x == 4.0);
}

TEST_CASE("kneedle_elbow needs at least 3 points") {
    CHECK_THROWS_AS(kneedle_elbow({1, 2}, {1, 0}), ValidationError);
}

TEST_CASE("pi is invariant under strictly increasing transforms of H") {
    Mat a = random_tokens(128, 6, 50);
    Mat b = random_tokens(128, 6, 51);
    Mat c = Mat::Zero(128, 6);
    ActivationSet acts = acts_from_mats({a, b, c});
    EntropyProfile p = layer_entropy_profile(acts, 6, 9);
    std::vector<double> scaled;
    for (double h : p.h) scaled.push_back(3.0 * h + 1.0);
    CHECK(ascending_order(scaled) == p.pi);
}
