#include "driftreg/graphnet.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "driftreg/cpd.hpp"
#include "driftreg/pointcloud.hpp"
#include "driftreg/tps.hpp"

namespace driftreg {

namespace {

constexpr double kLeakySlope = 0.2;

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Mat seeded_uniform(Eigen::Index rows, Eigen::Index cols, double limit, std::mt19937_64& rng) {
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = (2.0 * uniform01(rng) - 1.0) * limit;
    return m;
}

int edge_conv_input_dim(const Layer& layer) {
    return static_cast<int>(layer.weight.cols() / 2);
}

// neighbor/center row index lists for the (N*k)-row edge tensor
void edge_index_lists(const Graph& graph, std::vector<int>& centers, std::vector<int>& neighbors) {
    centers.clear();
    neighbors.clear();
    for (size_t i = 0; i < graph.neighbors.size(); ++i) {
        for (int j : graph.neighbors[i]) {
            centers.push_back(static_cast<int>(i));
            neighbors.push_back(j);
        }
    }
}

}  // namespace

void NetworkParams::validate() const {
    require(k >= 1, "NetworkParams: k must be >= 1");
    require(descriptor_dim >= 1, "NetworkParams: descriptor_dim must be >= 1");
    require(!layers.empty(), "NetworkParams: no layers");
    int dim = 3;
    bool seen_fc = false;
    int concat_dim = 0;
    for (const auto& layer : layers) {
        require(layer.weight.allFinite() && layer.bias.allFinite(),
                "NetworkParams: non-finite parameters");
        require(layer.bias.size() == layer.weight.rows(), "NetworkParams: bias/weight mismatch");
        if (layer.kind == Layer::Kind::EdgeConv) {
            require(!seen_fc, "NetworkParams: edge conv after fully-connected layer");
            require(layer.weight.cols() == 2 * dim,
                    "NetworkParams: edge conv expects weight cols = 2 * input dim");
            dim = static_cast<int>(layer.weight.rows());
            concat_dim += dim;
        } else {
            if (!seen_fc) {
                seen_fc = true;
                dim = concat_dim > 0 ? concat_dim : dim;
            }
            require(layer.weight.cols() == dim,
                    "NetworkParams: fully-connected input dim mismatch");
            dim = static_cast<int>(layer.weight.rows());
        }
    }
    require(seen_fc, "NetworkParams: needs at least one fully-connected layer");
    require(dim == descriptor_dim, "NetworkParams: final layer must emit descriptor_dim");
}

NetworkParams make_network(const std::vector<int>& conv_widths, const std::vector<int>& fc_hidden,
                           int k, int descriptor_dim, std::uint64_t seed) {
    NetworkParams params;
    params.k = k;
    params.descriptor_dim = descriptor_dim;
    std::mt19937_64 rng(seed);

    int dim = 3;
    int concat_dim = 0;
    for (int width : conv_widths) {
        Layer layer;
        layer.kind = Layer::Kind::EdgeConv;
        int fan_in = 2 * dim;
        double limit = std::sqrt(6.0 / static_cast<double>(fan_in + width));
        layer.weight = seeded_uniform(width, fan_in, limit, rng);
        layer.bias = Eigen::VectorXd::Zero(width);
        params.layers.push_back(std::move(layer));
        dim = width;
        concat_dim += width;
    }
    dim = concat_dim;
    std::vector<int> fc_dims = fc_hidden;
    fc_dims.push_back(descriptor_dim);
    for (int width : fc_dims) {
        Layer layer;
        layer.kind = Layer::Kind::FullyConnected;
        double limit = std::sqrt(6.0 / static_cast<double>(dim + width));
        layer.weight = seeded_uniform(width, dim, limit, rng);
        layer.bias = Eigen::VectorXd::Zero(width);
        params.layers.push_back(std::move(layer));
        dim = width;
    }
    params.validate();
    return params;
}

NetworkParams default_network(int k, int descriptor_dim, std::uint64_t seed) {
    return make_network({32, 64, 128}, {128}, k, descriptor_dim, seed);
}

std::string network_to_json(const NetworkParams& params) {
    nlohmann::json j;
    j["k"] = params.k;
    j["descriptor_dim"] = params.descriptor_dim;
    j["dynamic_graph"] = params.dynamic_graph;
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : params.layers) {
        nlohmann::json lj;
        lj["kind"] = layer.kind == Layer::Kind::EdgeConv ? "edge_conv" : "fully_connected";
        lj["rows"] = layer.weight.rows();
        lj["cols"] = layer.weight.cols();
        std::vector<double> w(static_cast<size_t>(layer.weight.size()));
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
                w[static_cast<size_t>(r * layer.weight.cols() + c)] = layer.weight(r, c);
        lj["weight"] = w;
        lj["bias"] = std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size());
        j["layers"].push_back(std::move(lj));
    }
    return j.dump(2);
}

NetworkParams network_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    NetworkParams params;
    params.k = j.at("k").get<int>();
    params.descriptor_dim = j.at("descriptor_dim").get<int>();
    params.dynamic_graph = j.value("dynamic_graph", true);
    for (const auto& lj : j.at("layers")) {
        Layer layer;
        std::string kind = lj.at("kind").get<std::string>();
        if (kind == "edge_conv")
            layer.kind = Layer::Kind::EdgeConv;
        else if (kind == "fully_connected")
            layer.kind = Layer::Kind::FullyConnected;
        else
            throw std::invalid_argument("unknown layer kind: " + kind);
        auto rows = lj.at("rows").get<Eigen::Index>();
        auto cols = lj.at("cols").get<Eigen::Index>();
        auto w = lj.at("weight").get<std::vector<double>>();
        auto b = lj.at("bias").get<std::vector<double>>();
        require(static_cast<Eigen::Index>(w.size()) == rows * cols,
                "weights file: weight size mismatch");
        require(static_cast<Eigen::Index>(b.size()) == rows, "weights file: bias size mismatch");
        layer.weight.resize(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c)
                layer.weight(r, c) = w[static_cast<size_t>(r * cols + c)];
        layer.bias = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
        params.layers.push_back(std::move(layer));
    }
    params.validate();
    return params;
}

void save_network(const NetworkParams& params, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError(IoErrorKind::WriteFailure, "cannot write " + path.string());
    out << network_to_json(params) << '\n';
    if (!out) throw IoError(IoErrorKind::WriteFailure, "write failed: " + path.string());
}

NetworkParams load_network(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(IoErrorKind::MissingFile, "no such file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return network_from_json(ss.str());
}

Mat edge_conv_forward(const Mat& features, const Graph& graph, const Mat& weight,
                      const Eigen::VectorXd& bias, double slope) {
    const auto n = features.rows();
    const auto f_in = features.cols();
    require(static_cast<Eigen::Index>(graph.neighbors.size()) == n,
            "edge_conv_forward: graph size mismatch");
    require(weight.cols() == 2 * f_in, "edge_conv_forward: weight expects 2 * input dim columns");
    require(bias.size() == weight.rows(), "edge_conv_forward: bias size mismatch");

    // weight * concat(h_i, h_j - h_i) = Wl h_i + Wr (h_j - h_i)
    Mat a = features * weight.leftCols(f_in).transpose();
    Mat b = features * weight.rightCols(f_in).transpose();
    const auto f_out = weight.rows();

    Mat out(n, f_out);
    Eigen::RowVectorXd z(f_out), best(f_out);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& nbrs = graph.neighbors[static_cast<size_t>(i)];
        require(!nbrs.empty(), "edge_conv_forward: node without neighbors");
        bool first = true;
        for (int j : nbrs) {
            z = a.row(i) + (b.row(j) - b.row(i)) + bias.transpose();
            for (Eigen::Index c = 0; c < f_out; ++c)
                if (z(c) <= 0.0) z(c) *= slope;
            if (first) {
                best = z;
                first = false;
            } else {
                best = best.cwiseMax(z);
            }
        }
        out.row(i) = best;
    }
    return out;
}

Mat descriptor_forward(const Points& ps, const NetworkParams& params) {
    params.validate();
    require(ps.rows() >= params.k + 1, "descriptor_forward: too few points for graph degree k");

    Mat h = ps;
    std::vector<Mat> conv_outputs;
    for (const auto& layer : params.layers) {
        if (layer.kind != Layer::Kind::EdgeConv) break;
        const Mat& graph_space = params.dynamic_graph ? h : static_cast<const Mat&>(ps);
        Graph graph = knn_rows(graph_space, params.k);
        h = edge_conv_forward(h, graph, layer.weight, layer.bias, kLeakySlope);
        conv_outputs.push_back(h);
    }

    Eigen::Index concat_dim = 0;
    for (const auto& c : conv_outputs) concat_dim += c.cols();
    Mat d(ps.rows(), concat_dim);
    Eigen::Index at = 0;
    for (const auto& c : conv_outputs) {
        d.middleCols(at, c.cols()) = c;
        at += c.cols();
    }

    size_t fc_start = conv_outputs.size();
    for (size_t li = fc_start; li < params.layers.size(); ++li) {
        const auto& layer = params.layers[li];
        d = (d * layer.weight.transpose()).rowwise() + layer.bias.transpose();
        if (li + 1 < params.layers.size())
            d = d.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    }

    for (Eigen::Index i = 0; i < d.rows(); ++i)
        d.row(i) /= std::max(d.row(i).norm(), 1e-30);
    return d;
}

TracedNetwork trace_network(const NetworkParams& params) {
    TracedNetwork net;
    for (const auto& layer : params.layers) {
        net.weights.push_back(ad::Value::leaf(layer.weight));
        net.biases.push_back(ad::Value::leaf(layer.bias.transpose()));
    }
    return net;
}

ad::Value descriptor_forward_traced(const Points& ps, const NetworkParams& params,
                                    const TracedNetwork& net) {
    params.validate();
    require(ps.rows() >= params.k + 1, "descriptor_forward: too few points for graph degree k");
    require(net.weights.size() == params.layers.size(), "trace/layer count mismatch");
    using namespace ad;

    Value h = Value::constant(ps);
    std::vector<Value> conv_outputs;
    std::vector<int> centers, neighbors;
    size_t li = 0;
    for (; li < params.layers.size(); ++li) {
        if (params.layers[li].kind != Layer::Kind::EdgeConv) break;
        const Mat& graph_space = params.dynamic_graph ? h.val() : static_cast<const Mat&>(ps);
        Graph graph = knn_rows(graph_space, params.k);
        edge_index_lists(graph, centers, neighbors);

        Value hc = gather_rows(h, centers);
        Value hn = gather_rows(h, neighbors);
        Value edge = concat_cols({hc, sub(hn, hc)});
        Value z = add_rowvec(matmul(edge, transpose(net.weights[li])), net.biases[li]);
        h = group_max_rows(leaky_relu(z, kLeakySlope), graph.k);
        conv_outputs.push_back(h);
    }

    Value d = concat_cols(conv_outputs);
    for (; li < params.layers.size(); ++li) {
        d = add_rowvec(matmul(d, transpose(net.weights[li])), net.biases[li]);
        if (li + 1 < params.layers.size()) d = leaky_relu(d, kLeakySlope);
    }
    return l2_normalize_rows(d);
}

double triplet_loss(const Mat& anchor, const Mat& positive, const Mat& negative, double margin) {
    require(anchor.rows() == positive.rows() && anchor.rows() == negative.rows(),
            "triplet_loss: row count mismatch");
    require(anchor.rows() >= 1, "triplet_loss: empty");
    require(margin >= 0.0, "triplet_loss: margin must be >= 0");
    double total = 0.0;
    for (Eigen::Index i = 0; i < anchor.rows(); ++i) {
        double dap = (anchor.row(i) - positive.row(i)).squaredNorm();
        double dan = (anchor.row(i) - negative.row(i)).squaredNorm();
        total += std::max(0.0, dap - dan + margin);
    }
    return total / static_cast<double>(anchor.rows());
}

ad::Value triplet_loss_traced(const ad::Value& anchor, const ad::Value& positive,
                              const ad::Value& negative, double margin) {
    using namespace ad;
    Value dp = sub(anchor, positive);
    Value dn = sub(anchor, negative);
    Value dap = rowwise_sum(cwise_mul(dp, dp));
    Value dan = rowwise_sum(cwise_mul(dn, dn));
    Value hinge = relu(add_const(sub(dap, dan), margin));
    return scale(1.0 / static_cast<double>(anchor.rows()), sum_all(hinge));
}

void TrainConfig::validate() const {
    require(learning_rate > 0.0, "TrainConfig: learning rate must be > 0");
    require(margin >= 0.0, "TrainConfig: margin must be >= 0");
    require(epochs >= 1, "TrainConfig: epochs must be >= 1");
}

std::vector<int> seeded_derangement(int n, std::uint64_t seed) {
    std::vector<int> p(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    if (n < 2) return p;
    std::mt19937_64 rng(seed);
    for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i));  // j < i: cyclic
        std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
    }
    return p;
}

void AdamOptimizer::step(NetworkParams& params, const TracedNetwork& traced) {
    const size_t n = params.layers.size();
    if (mw_.empty()) {
        mw_.resize(n);
        vw_.resize(n);
        mb_.resize(n);
        vb_.resize(n);
        for (size_t i = 0; i < n; ++i) {
            mw_[i] = Mat::Zero(params.layers[i].weight.rows(), params.layers[i].weight.cols());
            vw_[i] = mw_[i];
            mb_[i] = Mat::Zero(1, params.layers[i].bias.size());
            vb_[i] = mb_[i];
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    auto update = [&](Mat& p, Mat& m, Mat& v, const Mat& g) {
        m = b1_ * m + (1.0 - b1_) * g;
        v = (b2_ * v.array() + (1.0 - b2_) * g.array().square()).matrix();
        Mat mhat = m / c1;
        Mat vhat = v / c2;
        p -= (lr_ * mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
    };
    for (size_t i = 0; i < n; ++i) {
        update(params.layers[i].weight, mw_[i], vw_[i], traced.weights[i].grad());
        Mat bias_row = params.layers[i].bias.transpose();
        update(bias_row, mb_[i], vb_[i], traced.biases[i].grad());
        params.layers[i].bias = bias_row.transpose();
    }
}

namespace {

struct TripletIndices {
    std::vector<int> anchor, positive, negative;
};

TripletIndices triplet_indices(const TrainCase& c, std::uint64_t seed) {
    require(c.correspondences.size() >= 2,
            "train_triplet: each case needs at least 2 correspondence pairs");
    TripletIndices idx;
    idx.anchor = nearest_indices(c.fixed, c.correspondences.fixed);
    idx.positive = nearest_indices(c.moving, c.correspondences.corresponding);
    auto perm = seeded_derangement(static_cast<int>(idx.positive.size()), seed);
    idx.negative.resize(idx.positive.size());
    for (size_t i = 0; i < perm.size(); ++i)
        idx.negative[i] = idx.positive[static_cast<size_t>(perm[i])];
    return idx;
}

double triplet_case_loss(const TrainCase& c, const TripletIndices& idx,
                         const NetworkParams& params, double margin) {
    Mat df = descriptor_forward(c.fixed, params);
    Mat dm = descriptor_forward(c.moving, params);
    auto take = [](const Mat& m, const std::vector<int>& rows) {
        Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
        for (size_t i = 0; i < rows.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
        return out;
    };
    return triplet_loss(take(df, idx.anchor), take(dm, idx.positive), take(dm, idx.negative),
                        margin);
}

}  // namespace

NetworkParams train_triplet(const std::vector<TrainCase>& cases, const NetworkParams& init,
                            const TrainConfig& cfg, TrainReport* report) {
    require(!cases.empty(), "train_triplet: empty case list");
    cfg.validate();
    init.validate();

    std::vector<TripletIndices> indices;
    indices.reserve(cases.size());
    for (size_t ci = 0; ci < cases.size(); ++ci)
        indices.push_back(triplet_indices(cases[ci], cfg.seed + 0x9e3779b97f4a7c15ull * (ci + 1)));

    NetworkParams params = init;
    auto mean_loss = [&] {
        double total = 0.0;
        for (size_t ci = 0; ci < cases.size(); ++ci)
            total += triplet_case_loss(cases[ci], indices[ci], params, cfg.margin);
        return total / static_cast<double>(cases.size());
    };

    if (report) {
        report->initial_loss = mean_loss();
        report->epoch_loss.clear();
    }

    AdamOptimizer adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_total = 0.0;
        for (size_t ci = 0; ci < cases.size(); ++ci) {
            TracedNetwork net = trace_network(params);
            ad::Value df = descriptor_forward_traced(cases[ci].fixed, params, net);
            ad::Value dm = descriptor_forward_traced(cases[ci].moving, params, net);
            ad::Value loss = triplet_loss_traced(
                ad::gather_rows(df, indices[ci].anchor), ad::gather_rows(dm, indices[ci].positive),
                ad::gather_rows(dm, indices[ci].negative), cfg.margin);
            ad::backward(loss);
            adam.step(params, net);
            epoch_total += loss.scalar_val();
        }
        if (report) report->epoch_loss.push_back(epoch_total / static_cast<double>(cases.size()));
    }

    if (report) report->final_loss = mean_loss();
    return params;
}

double gradient_check(const NetworkParams& params, const TrainCase& train_case, LossTag tag,
                      const CpdParams* cpd_params, int unroll_iterations, int samples_per_tensor,
                      std::uint64_t seed) {
    params.validate();
    TripletIndices idx = triplet_indices(train_case, seed);

    CpdParams cpd_defaults;
    if (!cpd_params) cpd_params = &cpd_defaults;

    auto loss_of = [&](const NetworkParams& p) -> ad::Value {
        TracedNetwork net = trace_network(p);
        ad::Value df = descriptor_forward_traced(train_case.fixed, p, net);
        ad::Value dm = descriptor_forward_traced(train_case.moving, p, net);
        if (tag == LossTag::TripletThroughNetwork) {
            return triplet_loss_traced(ad::gather_rows(df, idx.anchor),
                                       ad::gather_rows(dm, idx.positive),
                                       ad::gather_rows(dm, idx.negative), 0.2);
        }
        CpdParams cp = *cpd_params;
        cp.iterations = unroll_iterations;
        UnrolledCpd reg = register_unrolled(train_case.fixed, train_case.moving, df, dm, cp);
        ad::Value warped = ad::add(ad::Value::constant(train_case.correspondences.corresponding),
                                   tps_fit_eval_traced(train_case.moving, reg.displacements, 1e-6,
                                                       train_case.correspondences.corresponding));
        return correspondence_loss_traced(train_case.correspondences.fixed, warped);
    };

    // analytic gradients
    NetworkParams work = params;
    TracedNetwork net = trace_network(work);
    {
        ad::Value df = descriptor_forward_traced(train_case.fixed, work, net);
        ad::Value dm = descriptor_forward_traced(train_case.moving, work, net);
        ad::Value loss;
        if (tag == LossTag::TripletThroughNetwork) {
            loss = triplet_loss_traced(ad::gather_rows(df, idx.anchor),
                                       ad::gather_rows(dm, idx.positive),
                                       ad::gather_rows(dm, idx.negative), 0.2);
        } else {
            CpdParams cp = *cpd_params;
            cp.iterations = unroll_iterations;
            UnrolledCpd reg = register_unrolled(train_case.fixed, train_case.moving, df, dm, cp);
            ad::Value warped =
                ad::add(ad::Value::constant(train_case.correspondences.corresponding),
                        tps_fit_eval_traced(train_case.moving, reg.displacements, 1e-6,
                                            train_case.correspondences.corresponding));
            loss = correspondence_loss_traced(train_case.correspondences.fixed, warped);
        }
        ad::backward(loss);
        require(std::isfinite(loss.scalar_val()), "gradient_check: non-finite loss");
    }

    const double h = 1e-5;
    double max_rel = 0.0;
    std::mt19937_64 rng(seed);
    for (size_t li = 0; li < work.layers.size(); ++li) {
        const Mat& gw = net.weights[li].grad();
        const Mat& gb = net.biases[li].grad();
        require(gw.allFinite() && gb.allFinite(), "gradient_check: non-finite gradient");
        auto probe = [&](bool is_bias, Eigen::Index r, Eigen::Index c, double analytic) {
            auto& layer = work.layers[li];
            double& slot = is_bias ? layer.bias(c) : layer.weight(r, c);
            const double saved = slot;
            slot = saved + h;
            double up = loss_of(work).scalar_val();
            slot = saved - h;
            double down = loss_of(work).scalar_val();
            slot = saved;
            double numeric = (up - down) / (2.0 * h);
            double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            if (rel > max_rel) max_rel = rel;
        };
        for (int s = 0; s < samples_per_tensor; ++s) {
            Eigen::Index r = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(gw.rows()));
            Eigen::Index c = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(gw.cols()));
            probe(false, r, c, gw(r, c));
        }
        Eigen::Index bc = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(gb.cols()));
        probe(true, 0, bc, gb(0, bc));
    }
    return max_rel;
}

}  // namespace driftreg
