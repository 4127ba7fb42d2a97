#include "nasbnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "nasbnn/checkpoint.hpp"
#include "nasbnn/errors.hpp"
#include "nasbnn/nn_ops.hpp"

namespace nasbnn {

Adam::Adam(std::vector<Param*> params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay) {
    for (Param* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step() {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t_;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Param* p = params_[i];
        float* w = p->value.data();
        const float* g = p->grad.data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const double wd = p->decay ? weight_decay_ : 0.0;
        for (int64_t j = 0; j < p->value.numel(); ++j) {
            const double grad = g[j] + wd * w[j];
            const double mj = b1 * m[j] + (1.0 - b1) * grad;
            const double vj = b2 * v[j] + (1.0 - b2) * grad * grad;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            w[j] -= static_cast<float>(lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
        }
    }
}

void Adam::export_state(std::map<std::string, Tensor*>& out) {
    for (size_t i = 0; i < params_.size(); ++i) {
        out["opt.m." + params_[i]->name] = &m_[i];
        out["opt.v." + params_[i]->name] = &v_[i];
    }
}

void Adam::import_state(const std::map<std::string, Tensor>& tensors, int64_t step_count) {
    for (size_t i = 0; i < params_.size(); ++i) {
        auto m = tensors.find("opt.m." + params_[i]->name);
        auto v = tensors.find("opt.v." + params_[i]->name);
        if (m == tensors.end() || v == tensors.end())
            throw DataError("optimizer state missing for " + params_[i]->name);
        if (!m->second.same_shape(m_[i]) || !v->second.same_shape(v_[i]))
            throw DataError("optimizer state shape mismatch for " + params_[i]->name);
        m_[i] = m->second;
        v_[i] = v->second;
    }
    t_ = step_count;
}

TrainConfig TrainConfig::paper_preset() {
    TrainConfig c;
    c.epochs = 512;
    c.batch_size = 512;
    c.lr = 5e-4;
    c.weight_decay = 5e-6;
    c.finetune_lr = 1e-5;
    c.finetune_epochs = 100;
    return c;
}

TrainConfig TrainConfig::desk_preset() {
    TrainConfig c;
    c.epochs = 60;
    c.batch_size = 64;
    c.lr = 2.5e-3;
    c.weight_decay = 5e-6;
    c.eval_every_epochs = 10;
    c.checkpoint_every_epochs = 30;
    c.finetune_lr = 1e-4;
    c.finetune_epochs = 5;
    return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return nlohmann::json{{"epochs", c.epochs},
                          {"batch_size", c.batch_size},
                          {"lr", c.lr},
                          {"weight_decay", c.weight_decay},
                          {"schedule", c.schedule},
                          {"num_random_subnets", c.num_random_subnets},
                          {"seed", c.seed},
                          {"teacher_mode", c.teacher_mode},
                          {"augment", c.augment},
                          {"deterministic", c.deterministic},
                          {"eval_every_epochs", c.eval_every_epochs},
                          {"checkpoint_every_epochs", c.checkpoint_every_epochs},
                          {"finetune_lr", c.finetune_lr},
                          {"finetune_epochs", c.finetune_epochs}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    try {
        TrainConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.schedule = j.value("schedule", c.schedule);
        c.num_random_subnets = j.value("num_random_subnets", c.num_random_subnets);
        c.seed = j.value("seed", c.seed);
        c.teacher_mode = j.value("teacher_mode", c.teacher_mode);
        c.augment = j.value("augment", c.augment);
        c.deterministic = j.value("deterministic", c.deterministic);
        c.eval_every_epochs = j.value("eval_every_epochs", c.eval_every_epochs);
        c.checkpoint_every_epochs = j.value("checkpoint_every_epochs", c.checkpoint_every_epochs);
        c.finetune_lr = j.value("finetune_lr", c.finetune_lr);
        c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
        if (c.teacher_mode != "fwba" && c.teacher_mode != "bwba")
            throw ConfigError("teacher_mode must be fwba or bwba");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed train config: ") + e.what());
    }
}

double cosine_lr(double lr_init, int64_t step, int64_t total_steps) {
    if (total_steps <= 1) return lr_init;
    const double t = std::min<double>(static_cast<double>(step), static_cast<double>(total_steps - 1));
    return lr_init * 0.5 * (1.0 + std::cos(M_PI * t / static_cast<double>(total_steps - 1)));
}

Trainer::Trainer(Supernet& net, const TrainConfig& cfg, const Dataset& train,
                 const ValSplit* heldout)
    : net_(net),
      cfg_(cfg),
      data_(train),
      heldout_(heldout),
      opt_(net.params(), cfg.lr, cfg.weight_decay),
      sampler_(net.space(), true),
      arch_rng_(make_rng(cfg.seed, 31)),
      data_rng_(make_rng(cfg.seed, 32)),
      aug_rng_(make_rng(cfg.seed, 33)),
      largest_(largest(net.space())),
      smallest_(smallest(net.space())) {
    if (heldout_)
        train_idx_ = train_indices_excluding(train, *heldout_);
    else
        for (int64_t i = 0; i < train.size(); ++i) train_idx_.push_back(i);
    if (static_cast<int>(train_idx_.size()) < cfg_.batch_size)
        throw DataError("training set smaller than one batch");
}

int64_t Trainer::total_steps() const {
    const int64_t per_epoch = static_cast<int64_t>(train_idx_.size()) / cfg_.batch_size;
    return per_epoch * cfg_.epochs;
}

StepLosses Trainer::sandwich_step(const Tensor& images, const std::vector<int>& labels) {
    StepLosses losses;
    net_.zero_grads();

    // Bi-Teacher: largest subnet, full-precision weights, binary activations.
    const ExecMode teacher_exec =
        cfg_.teacher_mode == "bwba" ? ExecMode::BWBA : ExecMode::FWBA;
    Tensor teacher_probs;
    {
        net_.activate(largest_);
        Trace trace;
        Tensor logits = net_.forward(images, {teacher_exec, true, false}, &trace);
        Tensor dlogits;
        losses.ce_teacher = nn::softmax_cross_entropy(logits, labels, &dlogits, &teacher_probs);
        // gradient mismatch avoidance: the FWBA pass updates weights, BN and
        // the head, not the binarizer parameters
        net_.backward(trace, dlogits, {cfg_.teacher_mode == "bwba"});
    }

    auto student_pass = [&](const Architecture& arch, double& kl_out) {
        net_.activate(arch);
        Trace trace;
        Tensor logits = net_.forward(images, {ExecMode::BWBA, true, false}, &trace);
        Tensor dlogits;
        kl_out = nn::kl_teacher_student(teacher_probs, logits, &dlogits);
        net_.backward(trace, dlogits, {true});
        return nn::top1_accuracy(logits, labels);
    };

    student_pass(smallest_, losses.kl_smallest);
    double acc_sum = 0.0;
    for (int i = 0; i < cfg_.num_random_subnets; ++i) {
        Architecture arch = sampler_.sample(arch_rng_);
        losses.kl_random.push_back(0.0);
        acc_sum += student_pass(arch, losses.kl_random.back());
    }
    losses.acc_random_mean =
        cfg_.num_random_subnets > 0 ? acc_sum / cfg_.num_random_subnets : 0.0;
    losses.total = losses.ce_teacher + losses.kl_smallest;
    for (double k : losses.kl_random) losses.total += k;

    auto check = [](double v, const char* term) {
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite loss term: ") + term);
    };
    check(losses.ce_teacher, "ce_teacher");
    check(losses.kl_smallest, "kl_smallest");
    for (double k : losses.kl_random) check(k, "kl_random");

    opt_.step();
    return losses;
}

double Trainer::evaluate_arch_quick(const Architecture& arch) {
    if (!heldout_) return 0.0;
    return eval_top1(net_, arch, data_, heldout_->indices, cfg_.batch_size, ExecMode::BWBA);
}

double Trainer::train_accuracy_last_epoch() const {
    if (epoch_rand_acc_.empty()) return 0.0;
    double s = 0.0;
    for (double v : epoch_rand_acc_) s += v;
    return s / static_cast<double>(epoch_rand_acc_.size());
}

nlohmann::json Trainer::trainer_meta() const {
    return nlohmann::json{{"step", step_},
                          {"epoch", epoch_},
                          {"opt_step", opt_.step_count()},
                          {"arch_rng", rng_state_to_string(arch_rng_)},
                          {"data_rng", rng_state_to_string(data_rng_)},
                          {"aug_rng", rng_state_to_string(aug_rng_)}};
}

void Trainer::restore(const nlohmann::json& meta, const std::map<std::string, Tensor>& tensors) {
    step_ = meta.at("step").get<int64_t>();
    epoch_ = meta.at("epoch").get<int>();
    opt_.import_state(tensors, meta.at("opt_step").get<int64_t>());
    rng_state_from_string(arch_rng_, meta.at("arch_rng").get<std::string>());
    rng_state_from_string(data_rng_, meta.at("data_rng").get<std::string>());
    rng_state_from_string(aug_rng_, meta.at("aug_rng").get<std::string>());
}

TrainResult Trainer::run(const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
    std::ofstream metrics(metrics_path, std::ios::app);
    if (!metrics) throw DataError("cannot open metrics log: " + metrics_path);
    const int64_t steps_per_epoch = static_cast<int64_t>(train_idx_.size()) / cfg_.batch_size;
    const int64_t total = total_steps();

    auto save = [&](const std::string& name) {
        std::map<std::string, Tensor*> tensors = net_.state();
        opt_.export_state(tensors);
        nlohmann::json meta{{"kind", "supernet"},
                            {"space", space_to_json(net_.space())},
                            {"config", train_config_to_json(cfg_)},
                            {"alpha_scaling", net_.config().alpha_scaling},
                            {"stem_lsq", net_.config().stem_lsq},
                            {"trainer", trainer_meta()}};
        const std::string path = (fs::path(out_dir) / name).string();
        save_checkpoint(path, meta, tensors);
        return path;
    };

    TrainResult result;
    std::vector<int64_t> order = train_idx_;
    Tensor images;
    std::vector<int> labels;
    for (; epoch_ < cfg_.epochs;) {
        std::shuffle(order.begin(), order.end(), data_rng_);
        epoch_rand_acc_.clear();
        for (int64_t b = 0; b < steps_per_epoch; ++b) {
            make_batch(data_, order.data() + b * cfg_.batch_size, cfg_.batch_size, cfg_.augment,
                       &aug_rng_, images, labels);
            opt_.set_lr(cosine_lr(cfg_.lr, step_, total));
            StepLosses l = sandwich_step(images, labels);
            epoch_rand_acc_.push_back(l.acc_random_mean);
            nlohmann::json rec{{"step", step_},
                               {"lr", opt_.lr()},
                               {"ce_teacher", l.ce_teacher},
                               {"kl_smallest", l.kl_smallest},
                               {"kl_random", l.kl_random},
                               {"total", l.total},
                               {"acc_random", l.acc_random_mean}};
            metrics << rec.dump() << "\n";
            ++step_;
        }
        metrics.flush();
        ++epoch_;
        if (heldout_ && (epoch_ % cfg_.eval_every_epochs == 0 || epoch_ == cfg_.epochs)) {
            result.final_acc_smallest = evaluate_arch_quick(smallest_);
            result.final_acc_largest = evaluate_arch_quick(largest_);
            nlohmann::json rec{{"epoch", epoch_},
                               {"acc_smallest", result.final_acc_smallest},
                               {"acc_largest", result.final_acc_largest},
                               {"acc_random_train", train_accuracy_last_epoch()}};
            metrics << rec.dump() << "\n";
            metrics.flush();
        }
        if (epoch_ % cfg_.checkpoint_every_epochs == 0 && epoch_ < cfg_.epochs)
            save("checkpoint_epoch" + std::to_string(epoch_) + ".nbnc");
    }
    result.checkpoint_path = save("checkpoint_final.nbnc");
    result.metrics_path = metrics_path;
    return result;
}

double eval_top1(Supernet& net, const Architecture& arch, const Dataset& data,
                 const std::vector<int64_t>& idx, int batch_size, ExecMode mode) {
    if (idx.empty()) throw DataError("eval_top1: empty evaluation split");
    net.activate(arch);
    Tensor images;
    std::vector<int> labels;
    int64_t hits = 0, seen = 0;
    for (size_t off = 0; off < idx.size(); off += static_cast<size_t>(batch_size)) {
        const int n = static_cast<int>(std::min<size_t>(batch_size, idx.size() - off));
        make_batch(data, idx.data() + off, n, false, nullptr, images, labels);
        Tensor logits = net.forward(images, {mode, false, false}, nullptr);
        hits += static_cast<int64_t>(std::llround(nn::top1_accuracy(logits, labels) * n));
        seen += n;
    }
    return static_cast<double>(hits) / static_cast<double>(seen);
}

FinetuneResult finetune(Supernet& subnet, const TrainConfig& cfg, const Dataset& train,
                        const std::vector<int64_t>& train_idx, const Dataset& eval_data,
                        const std::vector<int64_t>& eval_idx, int epochs) {
    const Architecture arch = subnet.active_arch();
    FinetuneResult r;
    r.acc_before = eval_top1(subnet, arch, eval_data, eval_idx, cfg.batch_size, ExecMode::BWBA);
    if (epochs <= 0) {
        r.acc_after = r.acc_before;
        return r;
    }
    Adam opt(subnet.params(), cfg.finetune_lr, cfg.weight_decay);
    Rng data_rng = make_rng(cfg.seed, 41);
    Rng aug_rng = make_rng(cfg.seed, 42);
    std::vector<int64_t> order = train_idx;
    const int64_t steps_per_epoch = static_cast<int64_t>(order.size()) / cfg.batch_size;
    if (steps_per_epoch == 0) throw DataError("finetune: training set smaller than one batch");
    Tensor images;
    std::vector<int> labels;
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), data_rng);
        for (int64_t b = 0; b < steps_per_epoch; ++b) {
            make_batch(train, order.data() + b * cfg.batch_size, cfg.batch_size, cfg.augment,
                       &aug_rng, images, labels);
            subnet.zero_grads();
            Trace trace;
            Tensor logits = subnet.forward(images, {ExecMode::BWBA, true, false}, &trace);
            Tensor dlogits;
            const double ce = nn::softmax_cross_entropy(logits, labels, &dlogits, nullptr);
            if (!std::isfinite(ce)) throw NumericError("non-finite loss term: finetune_ce");
            subnet.backward(trace, dlogits, {true});
            opt.step();
        }
    }
    r.acc_after = eval_top1(subnet, arch, eval_data, eval_idx, cfg.batch_size, ExecMode::BWBA);
    return r;
}

}  // namespace nasbnn
