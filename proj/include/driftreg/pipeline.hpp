#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "driftreg/cpd.hpp"
#include "driftreg/eval.hpp"
#include "driftreg/graphnet.hpp"
#include "driftreg/synth.hpp"

namespace driftreg {

enum class Method { Initial, Center, Knn, Cpd, FeatCpd };

Method method_from_string(const std::string& name);
std::string to_string(Method method);
// canonical report order: initial, center, knn, cpd, feat-cpd
int method_rank(Method method);

struct PipelineConfig {
    CpdParams cpd;
    TrainConfig train;
    int fps_count = 4096;
    int repeats = 10;
    int knn_k = 20;
    double tps_reg = 1e-6;
    std::uint64_t seed = 0;
    int threads = 0;  // 0: DRIFTREG_THREADS or hardware concurrency

    int finetune_steps = 50;
    int unroll_iterations = 15;
    double finetune_rho = 0.25;
    double finetune_beta = 0.5;

    int max_threads() const;
};

struct MethodRun {
    std::vector<int> sample;  // FPS indices into the case moving set
    Points displacements;     // one row per sampled moving point
    Points warped_eval;
    TreStats tre;
};

// FPS-samples both sets, runs one registration method, interpolates the
// displacement field to the eval landmarks with a TPS, and scores TRE.
MethodRun run_method(const RegistrationCase& c, Method method, const NetworkParams* net,
                     const PipelineConfig& cfg, std::uint64_t repeat_seed);

struct CaseEvaluation {
    std::string case_id;
    std::vector<Method> methods;
    std::vector<TreStats> per_method;  // stats over repeat-averaged landmark errors
};

CaseEvaluation evaluate_case(const RegistrationCase& c, const std::string& case_id,
                             const std::vector<Method>& methods, const NetworkParams* net,
                             const PipelineConfig& cfg);

std::vector<TrainCase> to_train_cases(const std::vector<RegistrationCase>& cases,
                                      const PipelineConfig& cfg);

struct FinetuneReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> step_loss;
};

// End-to-end training: descriptors -> unrolled CPD -> TPS -> correspondence
// loss, by Adam on the network parameters. rho and beta are relaxed to the
// finetune_* values.
NetworkParams finetune(const std::vector<RegistrationCase>& cases, const NetworkParams& init,
                       const PipelineConfig& cfg, FinetuneReport* report = nullptr);

// Correspondence loss of the plain (untraced) pipeline under the finetune
// registration settings; used as the validation metric.
double pipeline_correspondence_loss(const RegistrationCase& c, const NetworkParams& net,
                                    const PipelineConfig& cfg);

}  // namespace driftreg
