#include "driftreg/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <future>
#include <thread>

#include "driftreg/pointcloud.hpp"
#include "driftreg/tps.hpp"

namespace driftreg {

Method method_from_string(const std::string& name) {
    if (name == "initial") return Method::Initial;
    if (name == "center") return Method::Center;
    if (name == "knn") return Method::Knn;
    if (name == "cpd") return Method::Cpd;
    if (name == "feat-cpd") return Method::FeatCpd;
    throw std::invalid_argument("unknown method: " + name +
                                " (expected initial|center|knn|cpd|feat-cpd)");
}

std::string to_string(Method method) {
    switch (method) {
        case Method::Initial: return "initial";
        case Method::Center: return "center";
        case Method::Knn: return "knn";
        case Method::Cpd: return "cpd";
        case Method::FeatCpd: return "feat-cpd";
    }
    return "?";
}

int method_rank(Method method) { return static_cast<int>(method); }

int PipelineConfig::max_threads() const {
    if (threads > 0) return threads;
    if (const char* env = std::getenv("DRIFTREG_THREADS")) {
        int t = std::atoi(env);
        if (t >= 1) return t;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace

MethodRun run_method(const RegistrationCase& c, Method method, const NetworkParams* net,
                     const PipelineConfig& cfg, std::uint64_t repeat_seed) {
    const int m_count = std::min<int>(cfg.fps_count, static_cast<int>(c.moving.rows()));
    const int f_count = std::min<int>(cfg.fps_count, static_cast<int>(c.fixed.rows()));

    MethodRun run;
    run.sample = farthest_point_sample(c.moving, m_count, mix_seed(repeat_seed, 0));
    std::vector<int> fixed_sample = farthest_point_sample(c.fixed, f_count, mix_seed(repeat_seed, 1));
    Points moving = gather(c.moving, run.sample);
    Points fixed = gather(c.fixed, fixed_sample);

    const bool needs_descriptors = method == Method::Knn || method == Method::FeatCpd;
    Mat df, dm;
    if (needs_descriptors) {
        require(net != nullptr, std::string(to_string(method)) + " needs trained weights");
        df = descriptor_forward(fixed, *net);
        dm = descriptor_forward(moving, *net);
    }

    switch (method) {
        case Method::Initial:
            run.displacements = Points::Zero(moving.rows(), 3);
            break;
        case Method::Center: {
            auto [aligned, t] = center_align(fixed, moving);
            run.displacements = Points::Zero(moving.rows(), 3);
            run.displacements.rowwise() += t;
            break;
        }
        case Method::Knn:
            run.displacements = knn_match(df, dm, moving, fixed, cfg.knn_k);
            break;
        case Method::Cpd:
            run.displacements = cpd_register(fixed, moving, nullptr, nullptr, cfg.cpd);
            break;
        case Method::FeatCpd:
            run.displacements = cpd_register(fixed, moving, &df, &dm, cfg.cpd);
            break;
    }

    TpsModel tps = tps_fit(moving, run.displacements, cfg.tps_reg);
    Mat interp = tps_eval(tps, c.eval_landmarks.corresponding);
    run.warped_eval = c.eval_landmarks.corresponding + interp;
    run.tre = target_registration_error(c.eval_landmarks, interp);
    return run;
}

CaseEvaluation evaluate_case(const RegistrationCase& c, const std::string& case_id,
                             const std::vector<Method>& methods, const NetworkParams* net,
                             const PipelineConfig& cfg) {
    require(!methods.empty(), "evaluate_case: no methods");
    require(cfg.repeats >= 1, "evaluate_case: repeats must be >= 1");

    CaseEvaluation result;
    result.case_id = case_id;
    result.methods = methods;

    const int repeats = cfg.repeats;
    const int max_threads = std::max(1, cfg.max_threads());

    for (Method method : methods) {
        std::vector<std::vector<double>> per_repeat(static_cast<size_t>(repeats));
        for (int base = 0; base < repeats; base += max_threads) {
            int batch = std::min(max_threads, repeats - base);
            std::vector<std::future<std::vector<double>>> futures;
            futures.reserve(static_cast<size_t>(batch));
            for (int r = 0; r < batch; ++r) {
                std::uint64_t rs = mix_seed(cfg.seed, static_cast<std::uint64_t>(base + r));
                futures.push_back(std::async(std::launch::async, [&, rs] {
                    return run_method(c, method, net, cfg, rs).tre.errors;
                }));
            }
            for (int r = 0; r < batch; ++r)
                per_repeat[static_cast<size_t>(base + r)] = futures[static_cast<size_t>(r)].get();
        }

        std::vector<double> averaged(per_repeat[0].size(), 0.0);
        for (const auto& errors : per_repeat)
            for (size_t i = 0; i < errors.size(); ++i) averaged[i] += errors[i];
        for (double& e : averaged) e /= static_cast<double>(repeats);
        result.per_method.push_back(tre_stats_from_errors(std::move(averaged)));
    }
    return result;
}

std::vector<TrainCase> to_train_cases(const std::vector<RegistrationCase>& cases,
                                      const PipelineConfig& cfg) {
    std::vector<TrainCase> out;
    out.reserve(cases.size());
    for (size_t i = 0; i < cases.size(); ++i) {
        const auto& c = cases[i];
        TrainCase t;
        const int m_count = std::min<int>(cfg.fps_count, static_cast<int>(c.moving.rows()));
        const int f_count = std::min<int>(cfg.fps_count, static_cast<int>(c.fixed.rows()));
        t.moving = gather(c.moving, farthest_point_sample(c.moving, m_count, mix_seed(cfg.seed, 2 * i)));
        t.fixed = gather(c.fixed, farthest_point_sample(c.fixed, f_count, mix_seed(cfg.seed, 2 * i + 1)));
        t.correspondences = c.supervision;
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

CpdParams finetune_cpd_params(const PipelineConfig& cfg) {
    CpdParams p = cfg.cpd;
    p.rho = cfg.finetune_rho;
    p.beta = cfg.finetune_beta;
    p.iterations = cfg.unroll_iterations;
    return p;
}

}  // namespace

NetworkParams finetune(const std::vector<RegistrationCase>& cases, const NetworkParams& init,
                       const PipelineConfig& cfg, FinetuneReport* report) {
    require(!cases.empty(), "finetune: empty case list");
    init.validate();
    CpdParams cpd = finetune_cpd_params(cfg);

    std::vector<TrainCase> train_cases = to_train_cases(cases, cfg);

    NetworkParams params = init;
    auto mean_loss = [&] {
        double total = 0.0;
        for (size_t i = 0; i < cases.size(); ++i)
            total += pipeline_correspondence_loss(cases[i], params, cfg);
        return total / static_cast<double>(cases.size());
    };
    if (report) {
        report->initial_loss = mean_loss();
        report->step_loss.clear();
    }

    AdamOptimizer adam(cfg.train.learning_rate, cfg.train.adam_beta1, cfg.train.adam_beta2,
                       cfg.train.adam_eps);
    for (int step = 0; step < cfg.finetune_steps; ++step) {
        const TrainCase& tc = train_cases[static_cast<size_t>(step) % train_cases.size()];
        TracedNetwork net = trace_network(params);
        ad::Value df = descriptor_forward_traced(tc.fixed, params, net);
        ad::Value dm = descriptor_forward_traced(tc.moving, params, net);
        UnrolledCpd reg = register_unrolled(tc.fixed, tc.moving, df, dm, cpd);
        ad::Value interp = tps_fit_eval_traced(tc.moving, reg.displacements, cfg.tps_reg,
                                               tc.correspondences.corresponding);
        ad::Value warped = ad::add(ad::Value::constant(tc.correspondences.corresponding), interp);
        ad::Value loss = correspondence_loss_traced(tc.correspondences.fixed, warped);
        ad::backward(loss);
        adam.step(params, net);
        if (report) report->step_loss.push_back(loss.scalar_val());
    }

    if (report) report->final_loss = mean_loss();
    return params;
}

double pipeline_correspondence_loss(const RegistrationCase& c, const NetworkParams& net,
                                    const PipelineConfig& cfg) {
    CpdParams cpd = finetune_cpd_params(cfg);
    std::vector<TrainCase> tc = to_train_cases({c}, cfg);
    const TrainCase& t = tc[0];
    Mat df = descriptor_forward(t.fixed, net);
    Mat dm = descriptor_forward(t.moving, net);
    Points disp = cpd_register(t.fixed, t.moving, &df, &dm, cpd);
    TpsModel tps = tps_fit(t.moving, disp, cfg.tps_reg);
    Mat interp = tps_eval(tps, t.correspondences.corresponding);
    Points warped = t.correspondences.corresponding + interp;
    return correspondence_loss(t.correspondences.fixed, warped);
}

}  // namespace driftreg
