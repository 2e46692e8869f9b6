#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "driftreg/autodiff.hpp"
#include "driftreg/types.hpp"

namespace driftreg {

struct CpdParams;  // cpd.hpp

struct Layer {
    enum class Kind { EdgeConv, FullyConnected };
    Kind kind = Kind::EdgeConv;
    Mat weight;            // EdgeConv: out x (2*in); FullyConnected: out x in
    Eigen::VectorXd bias;  // out
};

// Descriptor network: a stack of edge convolutions whose kNN graph is
// rebuilt in the current feature space (set dynamic_graph = false to keep
// the coordinate graph), DenseNet-style concatenation of all edge conv
// outputs, a fully-connected head, and a final L2 row normalization.
struct NetworkParams {
    int k = 20;
    int descriptor_dim = 16;
    bool dynamic_graph = true;
    std::vector<Layer> layers;

    void validate() const;
};

NetworkParams make_network(const std::vector<int>& conv_widths, const std::vector<int>& fc_hidden,
                           int k, int descriptor_dim, std::uint64_t seed);
// conv widths 32/64/128, head 224 -> 128 -> descriptor_dim
NetworkParams default_network(int k = 20, int descriptor_dim = 16, std::uint64_t seed = 0);

std::string network_to_json(const NetworkParams& params);
NetworkParams network_from_json(const std::string& text);
void save_network(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_network(const std::filesystem::path& path);

// out_i = elementwise max over neighbors j of
//         leaky_relu(weight * concat(h_i, h_j - h_i) + bias)
Mat edge_conv_forward(const Mat& features, const Graph& graph, const Mat& weight,
                      const Eigen::VectorXd& bias, double slope = 0.2);

Mat descriptor_forward(const Points& ps, const NetworkParams& params);

// Per-layer parameter leaves for one training step.
struct TracedNetwork {
    std::vector<ad::Value> weights;
    std::vector<ad::Value> biases;  // 1 x out
};
TracedNetwork trace_network(const NetworkParams& params);
ad::Value descriptor_forward_traced(const Points& ps, const NetworkParams& params,
                                    const TracedNetwork& net);

double triplet_loss(const Mat& anchor, const Mat& positive, const Mat& negative, double margin);
ad::Value triplet_loss_traced(const ad::Value& anchor, const ad::Value& positive,
                              const ad::Value& negative, double margin);

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 200;
    double margin = 0.2;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

struct TrainCase {
    Points fixed;
    Points moving;
    LandmarkPairs correspondences;  // fixed side lives in `fixed`, corresponding side in `moving`
};

struct TrainReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> epoch_loss;
};

NetworkParams train_triplet(const std::vector<TrainCase>& cases, const NetworkParams& init,
                            const TrainConfig& cfg, TrainReport* report = nullptr);

class AdamOptimizer {
public:
    AdamOptimizer(double lr, double beta1, double beta2, double eps)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    // Applies one update from the gradients accumulated on `traced`.
    void step(NetworkParams& params, const TracedNetwork& traced);

private:
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    std::vector<Mat> mw_, vw_, mb_, vb_;
};

// Cyclic permutation of 0..n-1 (Sattolo), so no element maps to itself for
// n >= 2. Used to pick triplet negatives from the positives.
std::vector<int> seeded_derangement(int n, std::uint64_t seed);

enum class LossTag { TripletThroughNetwork, UnrolledCpd };

// Central finite differences (step 1e-5) against tape gradients on a seeded
// sample of parameters; returns the max relative error with denominator
// max(|g|, 1e-8). cpd_params/unroll_iterations matter for UnrolledCpd only.
double gradient_check(const NetworkParams& params, const TrainCase& train_case, LossTag tag,
                      const CpdParams* cpd_params = nullptr, int unroll_iterations = 5,
                      int samples_per_tensor = 4, std::uint64_t seed = 17);

}  // namespace driftreg
