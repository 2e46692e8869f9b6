#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "driftreg/pipeline.hpp"
#include "driftreg/pointcloud.hpp"
#include "driftreg/tps.hpp"

namespace fs = std::filesystem;
using namespace driftreg;

namespace {

// --config FILE holds {"params": {"flag-name": value, ...}}; values are
// injected before the user's arguments, so explicit flags win.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
            break;
        }
    }
    if (config_path.empty()) return args;

    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config file: " + config_path);
    nlohmann::json j = nlohmann::json::parse(in);
    std::vector<std::string> merged;
    if (args.empty()) throw std::runtime_error("--config requires a subcommand");
    merged.push_back(args[0]);  // subcommand first
    for (const auto& [key, value] : j.value("params", nlohmann::json::object()).items()) {
        merged.push_back("--" + key);
        if (value.is_string())
            merged.push_back(value.get<std::string>());
        else
            merged.push_back(value.dump());
    }
    merged.insert(merged.end(), args.begin() + 1, args.end());
    return merged;
}

void add_cpd_options(CLI::App* sub, CpdParams& cpd) {
    sub->add_option("--alpha", cpd.alpha, "feature prior trade-off")->capture_default_str();
    sub->add_option("--rho", cpd.rho, "feature Gaussian width")->capture_default_str();
    sub->add_option("--w", cpd.w, "outlier weight")->capture_default_str();
    sub->add_option("--lambda", cpd.lambda, "smoothness weight")->capture_default_str();
    sub->add_option("--beta", cpd.beta, "kernel width")->capture_default_str();
    sub->add_option("--iters", cpd.iterations, "EM iterations")->capture_default_str();
}

std::vector<RegistrationCase> load_cases(const std::vector<std::string>& dirs) {
    std::vector<RegistrationCase> cases;
    cases.reserve(dirs.size());
    for (const auto& d : dirs) cases.push_back(load_case(d));
    return cases;
}

std::vector<Method> parse_methods(const std::string& csv) {
    std::vector<Method> methods;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) methods.push_back(method_from_string(tok));
    }
    require(!methods.empty(), "no methods given");
    std::sort(methods.begin(), methods.end(),
              [](Method a, Method b) { return method_rank(a) < method_rank(b); });
    methods.erase(std::unique(methods.begin(), methods.end()), methods.end());
    return methods;
}

void write_matrix_csv(const Mat& m, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError(IoErrorKind::WriteFailure, "cannot write " + path.string());
    char buf[80];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            out << buf << (j + 1 < m.cols() ? "," : "");
        }
        out << '\n';
    }
}

struct EvalOutput {
    std::vector<MethodResult> rows;
    std::vector<std::pair<std::string, std::vector<double>>> pooled;  // method -> errors
};

void accumulate_eval(EvalOutput& out, const CaseEvaluation& ce) {
    for (size_t i = 0; i < ce.methods.size(); ++i) {
        const std::string name = to_string(ce.methods[i]);
        out.rows.push_back({ce.case_id, name, ce.per_method[i]});
        auto it = std::find_if(out.pooled.begin(), out.pooled.end(),
                               [&](const auto& p) { return p.first == name; });
        if (it == out.pooled.end()) {
            out.pooled.push_back({name, ce.per_method[i].errors});
        } else {
            it->second.insert(it->second.end(), ce.per_method[i].errors.begin(),
                              ce.per_method[i].errors.end());
        }
    }
}

void finish_eval(const EvalOutput& out, const fs::path& out_dir) {
    emit_report(out.rows, out_dir);

    // rank-sum p-values of every method against the best pooled mean
    size_t best = 0;
    auto pooled_mean = [&](size_t i) {
        const auto& e = out.pooled[i].second;
        double t = 0.0;
        for (double v : e) t += v;
        return t / static_cast<double>(e.size());
    };
    for (size_t i = 1; i < out.pooled.size(); ++i)
        if (pooled_mean(i) < pooled_mean(best)) best = i;

    std::ofstream pv(out_dir / "pvalues.csv");
    if (!pv) throw IoError(IoErrorKind::WriteFailure, "cannot write pvalues.csv");
    pv << "method,best_method,p_value\n";
    std::printf("pooled mean TRE (mm):\n");
    for (size_t i = 0; i < out.pooled.size(); ++i) {
        std::printf("  %-10s %8.3f\n", out.pooled[i].first.c_str(), pooled_mean(i));
        if (i == best) continue;
        double p = rank_sum_test(out.pooled[i].second, out.pooled[best].second);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6g", p);
        pv << out.pooled[i].first << ',' << out.pooled[best].first << ',' << buf << '\n';
    }
    std::printf("report written to %s\n", out_dir.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"driftreg: deformable point-set registration with learned descriptors"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic registration case");
    MakeCaseConfig mc;
    std::string synth_kind = "branching_tree", synth_out;
    synth->add_option("--kind", synth_kind, "branching_tree|grid|sphere_shell")
        ->capture_default_str();
    synth->add_option("--n", mc.n, "points per set")->capture_default_str();
    synth->add_option("--seed", mc.seed, "shape/noise seed")->capture_default_str();
    synth->add_option("--deform-seed", mc.deform_seed, "deformation seed")->capture_default_str();
    synth->add_option("--noise", mc.noise_sigma, "noise sigma (mm)")->capture_default_str();
    synth->add_option("--outliers", mc.outlier_frac, "outlier fraction")->capture_default_str();
    synth->add_option("--supervision", mc.supervision_count, "supervision pair count")
        ->capture_default_str();
    synth->add_option("--eval-count", mc.eval_count, "held-out eval pair count")
        ->capture_default_str();
    synth->add_option("--target-tre", mc.target_initial_tre,
                      "calibrated mean initial eval TRE in mm (0 = identity)")
        ->capture_default_str();
    synth->add_option("--out", synth_out, "case directory")->required();

    // pretrain
    auto* pretrain = app.add_subcommand("pretrain", "triplet-loss descriptor pretraining");
    std::vector<std::string> pre_cases;
    std::string pre_out;
    PipelineConfig pre_cfg;
    int pre_k = 20, pre_dim = 16;
    pretrain->add_option("--case", pre_cases, "case directories")->required()->expected(-1);
    pretrain->add_option("--out", pre_out, "weights JSON output")->required();
    pretrain->add_option("--epochs", pre_cfg.train.epochs)->capture_default_str();
    pretrain->add_option("--lr", pre_cfg.train.learning_rate)->capture_default_str();
    pretrain->add_option("--margin", pre_cfg.train.margin)->capture_default_str();
    pretrain->add_option("--seed", pre_cfg.seed)->capture_default_str();
    pretrain->add_option("--k", pre_k, "graph degree")->capture_default_str();
    pretrain->add_option("--dim", pre_dim, "descriptor dimension")->capture_default_str();
    pretrain->add_option("--fps", pre_cfg.fps_count, "FPS sample count")->capture_default_str();

    // register
    auto* reg = app.add_subcommand("register", "register one case with one method");
    std::string reg_method = "cpd", reg_case, reg_weights, reg_out;
    PipelineConfig reg_cfg;
    reg->add_option("--method", reg_method, "center|knn|cpd|feat-cpd")->capture_default_str();
    reg->add_option("--case", reg_case, "case directory")->required();
    reg->add_option("--weights", reg_weights, "weights JSON (knn/feat-cpd)");
    reg->add_option("--out", reg_out, "output directory")->required();
    reg->add_option("--fps", reg_cfg.fps_count)->capture_default_str();
    reg->add_option("--seed", reg_cfg.seed)->capture_default_str();
    reg->add_option("--knn-k", reg_cfg.knn_k)->capture_default_str();
    add_cpd_options(reg, reg_cfg.cpd);

    // finetune
    auto* fine = app.add_subcommand("finetune", "end-to-end training through unrolled CPD");
    std::vector<std::string> fine_cases;
    std::string fine_weights, fine_out;
    PipelineConfig fine_cfg;
    fine->add_option("--case", fine_cases, "case directories")->required()->expected(-1);
    fine->add_option("--weights", fine_weights, "pretrained weights JSON")->required();
    fine->add_option("--out", fine_out, "weights JSON output")->required();
    fine->add_option("--steps", fine_cfg.finetune_steps)->capture_default_str();
    fine->add_option("--unroll", fine_cfg.unroll_iterations)->capture_default_str();
    fine->add_option("--rho", fine_cfg.finetune_rho)->capture_default_str();
    fine->add_option("--beta", fine_cfg.finetune_beta)->capture_default_str();
    fine->add_option("--lr", fine_cfg.train.learning_rate)->capture_default_str();
    fine->add_option("--seed", fine_cfg.seed)->capture_default_str();
    fine->add_option("--fps", fine_cfg.fps_count)->capture_default_str();
    fine->add_option("--alpha", fine_cfg.cpd.alpha)->capture_default_str();
    fine->add_option("--w", fine_cfg.cpd.w)->capture_default_str();
    fine->add_option("--lambda", fine_cfg.cpd.lambda)->capture_default_str();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "TRE per method with repeated FPS resampling");
    std::vector<std::string> ev_cases;
    std::string ev_methods = "initial,center,cpd", ev_weights, ev_out;
    bool ev_loo = false;
    PipelineConfig ev_cfg;
    int ev_loo_epochs = 150;
    ev->add_option("--case", ev_cases, "case directories")->required()->expected(-1);
    ev->add_option("--methods", ev_methods, "comma-separated method list")->capture_default_str();
    ev->add_option("--weights", ev_weights, "weights JSON (knn/feat-cpd)");
    ev->add_option("--repeats", ev_cfg.repeats)->capture_default_str();
    ev->add_option("--out", ev_out, "report directory")->required();
    ev->add_option("--seed", ev_cfg.seed)->capture_default_str();
    ev->add_option("--fps", ev_cfg.fps_count)->capture_default_str();
    ev->add_option("--knn-k", ev_cfg.knn_k)->capture_default_str();
    ev->add_flag("--loo", ev_loo, "leave-one-out: pretrain on the other cases per held-out case");
    ev->add_option("--loo-epochs", ev_loo_epochs, "pretraining epochs in --loo mode")
        ->capture_default_str();
    add_cpd_options(ev, ev_cfg.cpd);

    try {
        auto args = expand_config(argc, argv);
        std::vector<const char*> cargs;
        cargs.push_back("driftreg");
        for (const auto& a : args) cargs.push_back(a.c_str());
        app.parse(static_cast<int>(cargs.size()), cargs.data());

        if (*synth) {
            mc.kind = shape_kind_from_string(synth_kind);
            RegistrationCase c = make_case(mc);
            save_case(c, synth_out);
            std::printf("case written to %s (initial TRE %.3f mm)\n", synth_out.c_str(),
                        c.initial_tre);
        } else if (*pretrain) {
            auto cases = load_cases(pre_cases);
            auto train_cases = to_train_cases(cases, pre_cfg);
            NetworkParams init = default_network(pre_k, pre_dim, pre_cfg.seed);
            pre_cfg.train.seed = pre_cfg.seed;
            TrainReport report;
            NetworkParams trained = train_triplet(train_cases, init, pre_cfg.train, &report);
            save_network(trained, pre_out);
            std::printf("triplet loss %.6f -> %.6f over %d epochs; weights in %s\n",
                        report.initial_loss, report.final_loss, pre_cfg.train.epochs,
                        pre_out.c_str());
        } else if (*reg) {
            RegistrationCase c = load_case(reg_case);
            Method method = method_from_string(reg_method);
            NetworkParams net;
            bool has_net = !reg_weights.empty();
            if (has_net) net = load_network(reg_weights);
            MethodRun run = run_method(c, method, has_net ? &net : nullptr, reg_cfg, reg_cfg.seed);
            fs::create_directories(reg_out);
            write_matrix_csv(run.displacements, fs::path(reg_out) / "displacements.csv");
            write_matrix_csv(run.warped_eval, fs::path(reg_out) / "warped_eval.csv");
            {
                std::ofstream s(fs::path(reg_out) / "sample.csv");
                for (int i : run.sample) s << i << '\n';
            }
            std::printf("%s: eval TRE %.3f mm (initial %.3f mm); outputs in %s\n",
                        to_string(method).c_str(), run.tre.mean, c.initial_tre, reg_out.c_str());
        } else if (*fine) {
            auto cases = load_cases(fine_cases);
            NetworkParams net = load_network(fine_weights);
            fine_cfg.train.seed = fine_cfg.seed;
            FinetuneReport report;
            NetworkParams tuned = finetune(cases, net, fine_cfg, &report);
            save_network(tuned, fine_out);
            std::printf("correspondence loss %.6f -> %.6f over %d steps; weights in %s\n",
                        report.initial_loss, report.final_loss, fine_cfg.finetune_steps,
                        fine_out.c_str());
        } else if (*ev) {
            auto methods = parse_methods(ev_methods);
            EvalOutput out;
            if (ev_loo) {
                require(ev_cases.size() >= 2, "--loo needs at least 2 cases");
                auto cases = load_cases(ev_cases);
                for (size_t held = 0; held < cases.size(); ++held) {
                    std::vector<RegistrationCase> train;
                    for (size_t i = 0; i < cases.size(); ++i)
                        if (i != held) train.push_back(cases[i]);
                    PipelineConfig cfg = ev_cfg;
                    cfg.train.epochs = ev_loo_epochs;
                    cfg.train.seed = cfg.seed;
                    NetworkParams net = train_triplet(to_train_cases(train, cfg),
                                                      default_network(20, 16, cfg.seed), cfg.train);
                    std::string id = fs::path(ev_cases[held]).filename().string();
                    if (id.empty()) id = "case" + std::to_string(held);
                    accumulate_eval(out, evaluate_case(cases[held], id, methods, &net, cfg));
                }
            } else {
                NetworkParams net;
                bool has_net = !ev_weights.empty();
                if (has_net) net = load_network(ev_weights);
                for (const auto& dir : ev_cases) {
                    RegistrationCase c = load_case(dir);
                    std::string id = fs::path(dir).filename().string();
                    if (id.empty()) id = dir;
                    accumulate_eval(out,
                                    evaluate_case(c, id, methods, has_net ? &net : nullptr, ev_cfg));
                }
            }
            finish_eval(out, ev_out);
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "driftreg: error: %s\n", e.what());
        return 1;
    }
}
