#pragma once

#include <cstdint>
#include <vector>

#include "luq/mat.hpp"
#include "luq/net.hpp"

namespace luq {

struct ClusterModel {
    int64_t k = 0;
    Mat centroids;  // [K, d]
    int64_t iterations = 0;
    double inertia = 0.0;
    uint64_t seed = 0;
};

struct EntropyProfile {
    std::vector<double> h;   // nats, per layer
    int64_t k = 0;
    std::vector<int64_t> pi;  // layer indices, ascending entropy, ties -> lower index
    uint64_t seed = 0;
};

struct StabilityCurve {
    std::vector<int64_t> grid;      // ascending K values
    std::vector<double> distances;  // between consecutive grid orderings
    int64_t selected_k = 0;
    double sensitivity = 1.0;
    bool knee_found = false;
};

struct KneedleResult {
    double x = 0.0;
    bool knee_found = false;
};

// Flattens [nseq, N, d] activations of one layer into [nseq*N, d] tokens.
Mat pool_tokens(const ActivationSet& acts, int64_t layer);

// kmeans++ seeding + Lloyd iterations; stops at 100 iterations or relative
// centroid movement below 1e-4. Empty clusters are reseeded to the point
// currently farthest from its centroid.
ClusterModel kmeans_fit(const Mat& tokens, int64_t k, uint64_t seed);

// Nearest centroid by L2; ties broken by lowest cluster index.
std::vector<int64_t> assign(const ClusterModel& model, const Mat& tokens);

std::vector<double> empirical_distribution(const std::vector<int64_t>& assignments,
                                           int64_t k);

// Natural-log Shannon entropy with 0 log 0 := 0.
double shannon_entropy(const std::vector<double>& p);

// Stable argsort of layer indices by ascending value.
std::vector<int64_t> ascending_order(const std::vector<double>& values);

EntropyProfile layer_entropy_profile(const ActivationSet& acts, int64_t k, uint64_t seed);

// Discordant pair count / C(n,2) between two orderings of the same items.
double kendall_distance(const std::vector<int64_t>& rank_a,
                        const std::vector<int64_t>& rank_b);

StabilityCurve rank_stability_curve(const ActivationSet& acts,
                                    const std::vector<int64_t>& k_grid, uint64_t seed);

// Knee of a decreasing curve: x maximizing (1 - y_norm) - x_norm after
// min-max normalization. Returns the last x with knee_found=false when the
// difference curve has no positive maximum.
KneedleResult kneedle_elbow(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace luq
