#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "arch/generator.hpp"
#include "arch/student.hpp"
#include "arch/teacher.hpp"
#include "core/rng.hpp"
#include "losses/losses.hpp"
#include "nn/optim.hpp"

namespace dfkd {
namespace distill {

// Constants of one adversarial distillation run. Each iteration performs
// student_steps student updates followed by one generator update.
struct DistillSchedule {
    int epochs = 0;
    int iterations = 0;    // per epoch
    int student_steps = 0; // per iteration
    int batch_size = 1;
    double eta_s = 0.1;
    double eta_g = 0.001;
    std::vector<int> lr_milestones; // epochs whose start scales both rates by lr_decay
    double lr_decay = 0.1;
    double momentum = 0.9;          // student optimizer
    double weight_decay = 5e-4;     // student optimizer
    double adam_beta1 = 0.9;        // generator optimizer
    double adam_beta2 = 0.999;

    void validate() const;
};

struct DistillState {
    int epoch = 0;         // next epoch to execute
    int64_t iteration = 0; // global iteration counter
    double lr_s = 0.0;
    double lr_g = 0.0;
    losses::LossReport epoch_mean; // mean over the most recent completed epoch
};

// One metrics line per iteration: head/ens/feat from the last student step,
// bn and the generator total from the generator step's own fresh batch.
struct IterationRecord {
    int epoch = 0;
    int iter = 0;
    losses::LossReport report;
    double lr_s = 0.0;
    double lr_g = 0.0;

    std::string json_line() const;
};

struct DistillHooks {
    std::function<void(const IterationRecord&)> on_iteration;
    // phase is "student" or "generator"; z the drawn noise, x the images
    std::function<void(const std::string& phase, const Tensor& z, const Tensor& x)> on_batch;
};

// Drives the min-max loop over a student, a generator, and frozen teachers.
// Student and generator batch-norm layers stay in training mode for every
// step, including the phases where their parameters are held fixed, so both
// keep collecting activation statistics.
class Distiller {
public:
    Distiller(arch::MultiHeadStudent& student, arch::Generator& generator,
              arch::TeacherBundle& teachers, const losses::LossWeights& weights,
              const DistillSchedule& schedule, uint64_t seed);

    // Executes the remaining epochs. With a non-empty out_dir, appends one
    // record per iteration to <out_dir>/metrics.jsonl and writes one
    // checkpoint per epoch under <out_dir>/checkpoints/epoch_NNNN.
    void run(const std::string& out_dir, const DistillHooks& hooks = {});

    // Continues from a checkpoint directory written by run(). Refuses when
    // the models at hand do not match the stored architecture fingerprint.
    void resume(const std::string& checkpoint_dir);

    // Single updates, exposed for fine-grained tests and tooling.
    losses::LossReport student_step();
    losses::LossReport generator_step();

    void save_checkpoint(const std::string& dir);

    // Parameter/buffer structure of student and generator plus the teacher
    // value fingerprint; a resumed run must reproduce it exactly.
    std::string architecture_fingerprint();

    DistillState& state() { return state_; }
    Rng& rng() { return rng_; }
    void set_hooks(DistillHooks hooks) { hooks_ = std::move(hooks); }

private:
    void apply_milestone(int epoch);
    Tensor draw_noise();
    void check_finite(double v, const char* phase, const std::string& rng_before) const;

    arch::MultiHeadStudent& student_;
    arch::Generator& generator_;
    arch::TeacherBundle& teachers_;
    losses::LossWeights weights_;
    DistillSchedule schedule_;
    Rng rng_;
    nn::Sgd opt_s_;
    nn::Adam opt_g_;
    DistillState state_;
    DistillHooks hooks_;
};

} // namespace distill
} // namespace dfkd
