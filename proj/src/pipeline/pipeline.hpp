#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arch/specs.hpp"
#include "attention/attention.hpp"
#include "data/dataset.hpp"
#include "distill/distill.hpp"
#include "losses/losses.hpp"

namespace dfkd {
namespace pipeline {

// Where the images come from and how they are split. An empty root means the
// color-coded synthetic set (the desk-scale profile); any other dataset needs
// a directory of per-class raster folders.
struct DatasetPlan {
    std::string name;
    std::string root;
    int input_h = 32;
    int input_w = 32;
    int classes = 10;
    double train_fraction = 0.8;
    uint64_t split_seed = 1;
    int synthetic_per_class = 500;
};

// Supervised teacher recipe. The seeds are the only thing that differs
// between the teachers; when the list is empty one seed per teacher is
// derived from the run seed.
struct TeacherPlan {
    std::string arch = "resnet34";
    int count = 3;
    std::vector<uint64_t> seeds;
    int epochs = 200;
    int batch_size = 128;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> lr_milestones;
    double lr_decay = 0.1;
    double accuracy_floor = 0.0; // percent; scores below it warn, never fail
};

// Query tuning on the small real subset, including the slice held out of
// that subset for selecting the best epoch.
struct AttentionPlan {
    double subset_fraction = 0.1;
    double val_fraction = 0.2;
    attention::AttentionTrainConfig train;
};

struct ExportPlan {
    int rows = 8;
    int cols = 8;
};

// Everything one experiment needs, assembled from a dataset profile plus the
// overrides in the config file. The student's class count and the generator's
// output size always mirror the dataset and are not separate knobs.
struct ExperimentConfig {
    DatasetPlan dataset;
    TeacherPlan teachers;
    arch::StudentSpec student;
    arch::GeneratorSpec generator;
    losses::LossWeights weights;
    distill::DistillSchedule schedule;
    AttentionPlan attention;
    ExportPlan grid;
    uint64_t seed = 0;
    std::string output_dir = "runs/experiment";

    void validate() const;
    // Every field in a fixed key order, so equal configs dump equal text.
    std::string canonical_json() const;
    // FNV-1a of the canonical form minus output_dir: moving a run's artifact
    // directory does not change what was computed.
    std::string config_hash() const;
};

// Profile defaults for a dataset name (desk, cifar100, caltech101,
// mini_imagenet); the config file overrides them field by field.
ExperimentConfig default_config(const std::string& dataset_name);

// Strict parse: unknown keys are rejected, and missing or mistyped values
// name the offending path. The only required key is dataset.name.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text, const std::string& origin);

struct Splits {
    data::Dataset train;
    data::Dataset test;
};

// Loads (or synthesizes) the dataset and applies the per-class split under
// the split seed.
Splits ingest(const ExperimentConfig& cfg);

// One pipeline stage; the names double as the command-line verbs.
enum class Command {
    Pretrain,
    Distill,
    Attention,
    Eval,
    ExportSamples,
    Count,
    Confusion,
    Gradcam,
};

Command command_from_string(const std::string& name);

struct RunOptions {
    std::string resume_checkpoint; // distill only: continue from this directory
};

// Runs one stage against the artifact directory and returns a short summary.
// Stages that need earlier artifacts check for them first and name the
// command that produces them.
std::string run_command(const ExperimentConfig& cfg, Command cmd, const RunOptions& opts = {});

} // namespace pipeline
} // namespace dfkd
