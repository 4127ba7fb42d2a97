#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nasbnn/dataset.hpp"
#include "nasbnn/supernet.hpp"

namespace nasbnn {

class Adam {
public:
    Adam(std::vector<Param*> params, double lr, double weight_decay);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void step();
    int64_t step_count() const { return t_; }

    // optimizer state round-trips through checkpoints as opt.m.* / opt.v.*
    void export_state(std::map<std::string, Tensor*>& out);
    void import_state(const std::map<std::string, Tensor>& tensors, int64_t step_count);

private:
    std::vector<Param*> params_;
    std::vector<Tensor> m_, v_;
    double lr_, weight_decay_;
    int64_t t_ = 0;
};

struct TrainConfig {
    int epochs = 512;
    int batch_size = 512;
    double lr = 5e-4;
    double weight_decay = 5e-6;
    std::string schedule = "cosine";
    int num_random_subnets = 2;
    uint64_t seed = 1;
    std::string teacher_mode = "fwba";  // "bwba" runs the ablation control
    bool augment = true;
    bool deterministic = false;
    int eval_every_epochs = 10;
    int checkpoint_every_epochs = 20;
    double finetune_lr = 1e-5;
    int finetune_epochs = 100;

    static TrainConfig paper_preset();
    static TrainConfig desk_preset();
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct StepLosses {
    double ce_teacher = 0.0;
    double kl_smallest = 0.0;
    std::vector<double> kl_random;
    double total = 0.0;
    double acc_random_mean = 0.0;  // train-batch top-1 of the random subnets
};

double cosine_lr(double lr_init, int64_t step, int64_t total_steps);

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    double final_acc_smallest = 0.0;
    double final_acc_largest = 0.0;
};

class Trainer {
public:
    Trainer(Supernet& net, const TrainConfig& cfg, const Dataset& train, const ValSplit* heldout);

    // One sandwich-rule iteration: Bi-Teacher CE pass (largest subnet),
    // distilled smallest + random subnets, a single optimizer update.
    StepLosses sandwich_step(const Tensor& images, const std::vector<int>& labels);

    // Full loop with a JSON-lines metrics log and periodic checkpoints.
    TrainResult run(const std::string& out_dir);

    // Resumes counters, optimizer state and RNG streams from a checkpoint
    // produced by run(); the supernet state must be loaded separately.
    void restore(const nlohmann::json& meta, const std::map<std::string, Tensor>& tensors);

    nlohmann::json trainer_meta() const;
    void export_opt_state(std::map<std::string, Tensor*>& out) { opt_.export_state(out); }

    int64_t global_step() const { return step_; }
    int64_t total_steps() const;
    int epoch() const { return epoch_; }
    double train_accuracy_last_epoch() const;  // mean over random-subnet passes

    double evaluate_arch_quick(const Architecture& arch);  // BWBA on the held-out split

private:
    Supernet& net_;
    TrainConfig cfg_;
    const Dataset& data_;
    const ValSplit* heldout_;
    std::vector<int64_t> train_idx_;
    Adam opt_;
    UniformSampler sampler_;
    Rng arch_rng_, data_rng_, aug_rng_;
    Architecture largest_, smallest_;
    int64_t step_ = 0;
    int epoch_ = 0;
    std::vector<double> epoch_rand_acc_;
};

// Pipeline-2 finetuning: plain BWBA cross-entropy training of an extracted
// subnet. Returns (accuracy before, accuracy after) on `eval`.
struct FinetuneResult {
    double acc_before = 0.0;
    double acc_after = 0.0;
};
FinetuneResult finetune(Supernet& subnet, const TrainConfig& cfg, const Dataset& train,
                        const std::vector<int64_t>& train_idx, const Dataset& eval_data,
                        const std::vector<int64_t>& eval_idx, int epochs);

// Plain top-1 evaluation in a given mode with existing BN statistics.
double eval_top1(Supernet& net, const Architecture& arch, const Dataset& data,
                 const std::vector<int64_t>& idx, int batch_size, ExecMode mode);

}  // namespace nasbnn
