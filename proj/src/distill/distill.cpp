#include "distill/distill.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "core/blob.hpp"

namespace dfkd {
namespace distill {

using nlohmann::json;

void DistillSchedule::validate() const {
    if (epochs < 0 || iterations < 0 || student_steps < 0)
        throw std::runtime_error("distill schedule: epoch/iteration/step counts must be non-negative");
    if (batch_size < 1)
        throw std::runtime_error("distill schedule: batch_size must be at least 1");
    if (!std::isfinite(eta_s) || eta_s < 0.0 || !std::isfinite(eta_g) || eta_g < 0.0)
        throw std::runtime_error("distill schedule: learning rates must be finite and non-negative");
    if (!std::isfinite(lr_decay) || lr_decay <= 0.0)
        throw std::runtime_error("distill schedule: lr_decay must be positive");
    if (momentum < 0.0 || weight_decay < 0.0)
        throw std::runtime_error("distill schedule: momentum and weight_decay must be non-negative");
    for (size_t i = 0; i < lr_milestones.size(); ++i) {
        if (i > 0 && lr_milestones[i] <= lr_milestones[i - 1])
            throw std::runtime_error("distill schedule: lr_milestones must be strictly increasing");
        if (lr_milestones[i] < 0 || lr_milestones[i] >= epochs)
            throw std::runtime_error("distill schedule: lr_milestone " +
                                     std::to_string(lr_milestones[i]) + " outside 0.." +
                                     std::to_string(epochs - 1));
    }
}

std::string IterationRecord::json_line() const {
    json j;
    j["epoch"] = epoch;
    j["iter"] = iter;
    j["bn"] = report.bn;
    j["head"] = report.head;
    j["ens"] = report.ens;
    j["feat"] = report.feat;
    j["student_total"] = report.student_total;
    j["generator_total"] = report.generator_total;
    j["lr_s"] = lr_s;
    j["lr_g"] = lr_g;
    return j.dump();
}

Distiller::Distiller(arch::MultiHeadStudent& student, arch::Generator& generator,
                     arch::TeacherBundle& teachers, const losses::LossWeights& weights,
                     const DistillSchedule& schedule, uint64_t seed)
    : student_(student),
      generator_(generator),
      teachers_(teachers),
      weights_(weights),
      schedule_(schedule),
      rng_(seed),
      opt_s_(student.parameters(), schedule.eta_s, schedule.momentum, schedule.weight_decay),
      opt_g_(generator.parameters(), schedule.eta_g, schedule.adam_beta1, schedule.adam_beta2,
             1e-8, 0.0, false) {
    schedule_.validate();
    weights_.validate();
    if (student_.num_headers() != teachers_.count())
        throw std::runtime_error("distill: " + std::to_string(student_.num_headers()) +
                                 " student headers cannot pair with " +
                                 std::to_string(teachers_.count()) + " teachers");
    if (student_.feature_dim() != teachers_.feature_dim)
        throw std::runtime_error("distill: student feature dim " +
                                 std::to_string(student_.feature_dim()) +
                                 " does not match teacher feature dim " +
                                 std::to_string(teachers_.feature_dim) +
                                 " (set the student feature projection)");
    teachers_.freeze();
    student_.set_training(true);
    generator_.set_training(true);
    state_.lr_s = schedule_.eta_s;
    state_.lr_g = schedule_.eta_g;
}

Tensor Distiller::draw_noise() {
    Tensor z({schedule_.batch_size, generator_.spec.noise_dim});
    rng_.fill_normal(z);
    return z;
}

void Distiller::check_finite(double v, const char* phase, const std::string& rng_before) const {
    if (std::isfinite(v)) return;
    throw std::runtime_error("distill: non-finite " + std::string(phase) +
                             " objective at epoch " + std::to_string(state_.epoch) +
                             " iteration " + std::to_string(state_.iteration) +
                             "; rng state before the batch draw: " + rng_before);
}

losses::LossReport Distiller::student_step() {
    std::string rng_before = rng_.state_string();
    Tensor z = draw_noise();
    Tape tape;
    nn::FreezeGuard hold(generator_); // fixed input source; its BN keeps collecting
    Var x = generator_.forward(tape, make_input(z, false));
    if (hooks_.on_batch) hooks_.on_batch("student", z, x->value);
    auto teacher_outs = teachers_.forward_all(tape, x, false);
    std::vector<Var> t_logits, t_feats;
    for (auto& o : teacher_outs) {
        t_logits.push_back(o.logits);
        t_feats.push_back(o.feature);
    }
    arch::StudentOut s_out = student_.forward(tape, x);
    Var head = losses::header_loss(s_out, t_logits);
    Var ens = losses::ensemble_loss(s_out, t_logits);
    Var feat = losses::feature_loss(s_out, t_feats);
    Var objective = losses::student_objective(head, ens, feat, weights_);
    check_finite(objective->value[0], "student", rng_before);
    opt_s_.zero_grad();
    tape.backward(objective);
    opt_s_.step();
    return losses::make_report(0.0, head->value[0], ens->value[0], feat->value[0], weights_);
}

losses::LossReport Distiller::generator_step() {
    std::string rng_before = rng_.state_string();
    Tensor z = draw_noise();
    Tape tape;
    nn::FreezeGuard hold(student_); // fixed discriminator; its BN keeps collecting
    Var x = generator_.forward(tape, make_input(z, false));
    if (hooks_.on_batch) hooks_.on_batch("generator", z, x->value);
    auto teacher_outs = teachers_.forward_all(tape, x, true);
    std::vector<Var> t_logits;
    std::vector<std::vector<nn::BnObservation>> stat_records;
    for (auto& o : teacher_outs) {
        t_logits.push_back(o.logits);
        stat_records.push_back(std::move(o.bn_obs));
    }
    arch::StudentOut s_out = student_.forward(tape, x);
    Var head = losses::header_loss(s_out, t_logits);
    Var bn = losses::bn_loss(stat_records);
    Var objective = losses::generator_objective(head, bn, weights_);
    check_finite(objective->value[0], "generator", rng_before);
    opt_g_.zero_grad();
    tape.backward(objective);
    opt_g_.step();
    return losses::make_report(bn->value[0], head->value[0], 0.0, 0.0, weights_);
}

void Distiller::apply_milestone(int epoch) {
    for (int m : schedule_.lr_milestones) {
        if (m != epoch) continue;
        state_.lr_s *= schedule_.lr_decay;
        state_.lr_g *= schedule_.lr_decay;
        opt_s_.set_lr(state_.lr_s);
        opt_g_.set_lr(state_.lr_g);
    }
}

void Distiller::run(const std::string& out_dir, const DistillHooks& hooks) {
    hooks_ = hooks;
    std::ofstream metrics;
    std::string ckpt_root;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics.open(out_dir + "/metrics.jsonl", std::ios::app);
        if (!metrics)
            throw std::runtime_error("distill: cannot open metrics log under " + out_dir);
        ckpt_root = out_dir + "/checkpoints";
    }

    for (int epoch = state_.epoch; epoch < schedule_.epochs; ++epoch) {
        apply_milestone(epoch);
        losses::LossReport sums;
        for (int it = 0; it < schedule_.iterations; ++it) {
            losses::LossReport s_part;
            for (int s = 0; s < schedule_.student_steps; ++s) s_part = student_step();
            losses::LossReport g_part = generator_step();

            IterationRecord rec;
            rec.epoch = epoch;
            rec.iter = it;
            rec.report.bn = g_part.bn;
            rec.report.head = s_part.head;
            rec.report.ens = s_part.ens;
            rec.report.feat = s_part.feat;
            rec.report.student_total = s_part.student_total;
            rec.report.generator_total = g_part.generator_total;
            rec.lr_s = state_.lr_s;
            rec.lr_g = state_.lr_g;

            sums.bn += rec.report.bn;
            sums.head += rec.report.head;
            sums.ens += rec.report.ens;
            sums.feat += rec.report.feat;
            sums.student_total += rec.report.student_total;
            sums.generator_total += rec.report.generator_total;

            if (metrics.is_open()) {
                metrics << rec.json_line() << '\n';
                metrics.flush();
            }
            if (hooks_.on_iteration) hooks_.on_iteration(rec);
            ++state_.iteration;
        }
        if (schedule_.iterations > 0) {
            double inv = 1.0 / schedule_.iterations;
            sums.bn *= inv;
            sums.head *= inv;
            sums.ens *= inv;
            sums.feat *= inv;
            sums.student_total *= inv;
            sums.generator_total *= inv;
        }
        state_.epoch_mean = sums;
        state_.epoch = epoch + 1;
        if (!ckpt_root.empty()) {
            char name[24];
            std::snprintf(name, sizeof name, "epoch_%04d", epoch);
            save_checkpoint(ckpt_root + "/" + name);
        }
    }
}

std::string Distiller::architecture_fingerprint() {
    uint64_t h = fnv1a64_str("distill-architecture");
    auto fold = [&h](nn::Module& m, const char* tag) {
        nn::Registry reg;
        m.collect(reg, tag);
        for (auto& [name, p] : reg.params) {
            h = fnv1a64(name.data(), name.size(), h);
            for (int d : p->value.shape()) {
                int64_t v = d;
                h = fnv1a64(&v, sizeof v, h);
            }
        }
        for (auto& [name, t] : reg.buffers) {
            h = fnv1a64(name.data(), name.size(), h);
            for (int d : t->shape()) {
                int64_t v = d;
                h = fnv1a64(&v, sizeof v, h);
            }
        }
    };
    fold(student_, "student");
    fold(generator_, "generator");
    uint64_t teacher_values = teachers_.state_fingerprint();
    h = fnv1a64(&teacher_values, sizeof teacher_values, h);
    return hash_hex(h);
}

void Distiller::save_checkpoint(const std::string& dir) {
    std::filesystem::create_directories(dir);
    student_.save_state(dir + "/student.bin");
    generator_.save_state(dir + "/generator.bin");
    BlobWriter opt;
    opt_s_.save(opt, "student_opt");
    opt_g_.save(opt, "generator_opt");
    opt.write(dir + "/optim.bin");

    json m;
    m["epochs_completed"] = state_.epoch;
    m["iteration"] = state_.iteration;
    m["lr_s"] = state_.lr_s;
    m["lr_g"] = state_.lr_g;
    m["rng"] = rng_.state_string();
    m["architecture"] = architecture_fingerprint();
    m["schedule"] = {{"epochs", schedule_.epochs},
                     {"iterations", schedule_.iterations},
                     {"student_steps", schedule_.student_steps},
                     {"batch_size", schedule_.batch_size},
                     {"eta_s", schedule_.eta_s},
                     {"eta_g", schedule_.eta_g},
                     {"lr_milestones", schedule_.lr_milestones},
                     {"lr_decay", schedule_.lr_decay},
                     {"momentum", schedule_.momentum},
                     {"weight_decay", schedule_.weight_decay}};
    m["weights"] = {{"alpha", weights_.alpha},
                    {"beta", weights_.beta},
                    {"gamma", weights_.gamma},
                    {"lambda", weights_.lambda}};

    std::string tmp = dir + "/manifest.json.tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw std::runtime_error("distill: cannot write checkpoint manifest in " + dir);
        os << m.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, dir + "/manifest.json");
}

void Distiller::resume(const std::string& checkpoint_dir) {
    std::ifstream is(checkpoint_dir + "/manifest.json");
    if (!is)
        throw std::runtime_error("distill: no checkpoint manifest under " + checkpoint_dir);
    json m = json::parse(is);

    std::string want = m.at("architecture").get<std::string>();
    std::string have = architecture_fingerprint();
    if (want != have)
        throw std::runtime_error("distill: checkpoint architecture fingerprint " + want +
                                 " does not match the loaded models (" + have +
                                 "); refusing to resume");

    student_.load_state(checkpoint_dir + "/student.bin");
    generator_.load_state(checkpoint_dir + "/generator.bin");
    auto blob = blob_read(checkpoint_dir + "/optim.bin");
    opt_s_.load(blob, "student_opt");
    opt_g_.load(blob, "generator_opt");
    rng_.load_state_string(m.at("rng").get<std::string>());
    state_.epoch = m.at("epochs_completed").get<int>();
    state_.iteration = m.at("iteration").get<int64_t>();
    state_.lr_s = m.at("lr_s").get<double>();
    state_.lr_g = m.at("lr_g").get<double>();
    opt_s_.set_lr(state_.lr_s);
    opt_g_.set_lr(state_.lr_g);
}

} // namespace distill
} // namespace dfkd
