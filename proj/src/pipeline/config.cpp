#include "pipeline/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "core/rng.hpp"

namespace dfkd {
namespace pipeline {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
    throw std::runtime_error("config: " + (path.empty() ? "top level" : path) + ": " + msg);
}

std::string join_path(const std::string& base, const std::string& key) {
    return base.empty() ? key : base + "." + key;
}

void check_keys(const json& j, const std::string& base, std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* a : allowed)
            if (it.key() == a) {
                known = true;
                break;
            }
        if (!known) fail(join_path(base, it.key()), "unknown key");
    }
}

const json* find(const json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

const json* find_object(const json& j, const std::string& base, const char* key) {
    const json* v = find(j, key);
    if (v && !v->is_object()) fail(join_path(base, key), std::string("expected an object, got ") + v->type_name());
    return v;
}

int get_int(const json& j, const std::string& base, const char* key, int fallback) {
    const json* v = find(j, key);
    if (!v) return fallback;
    if (!v->is_number_integer()) fail(join_path(base, key), std::string("expected an integer, got ") + v->type_name());
    return v->get<int>();
}

uint64_t get_u64(const json& j, const std::string& base, const char* key, uint64_t fallback) {
    const json* v = find(j, key);
    if (!v) return fallback;
    if (v->is_number_unsigned()) return v->get<uint64_t>();
    if (v->is_number_integer()) {
        int64_t x = v->get<int64_t>();
        if (x < 0) fail(join_path(base, key), "expected a non-negative integer");
        return static_cast<uint64_t>(x);
    }
    fail(join_path(base, key), std::string("expected an integer, got ") + v->type_name());
}

double get_double(const json& j, const std::string& base, const char* key, double fallback) {
    const json* v = find(j, key);
    if (!v) return fallback;
    if (!v->is_number()) fail(join_path(base, key), std::string("expected a number, got ") + v->type_name());
    return v->get<double>();
}

std::string get_string(const json& j, const std::string& base, const char* key, const std::string& fallback) {
    const json* v = find(j, key);
    if (!v) return fallback;
    if (!v->is_string()) fail(join_path(base, key), std::string("expected a string, got ") + v->type_name());
    return v->get<std::string>();
}

std::vector<int> get_int_list(const json& j, const std::string& base, const char* key,
                              const std::vector<int>& fallback) {
    const json* v = find(j, key);
    if (!v) return fallback;
    if (!v->is_array()) fail(join_path(base, key), std::string("expected an array, got ") + v->type_name());
    std::vector<int> out;
    for (size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        if (!e.is_number_integer())
            fail(join_path(base, key) + "[" + std::to_string(i) + "]",
                 std::string("expected an integer, got ") + e.type_name());
        out.push_back(e.get<int>());
    }
    return out;
}

std::vector<uint64_t> get_u64_list(const json& j, const std::string& base, const char* key,
                                   const std::vector<uint64_t>& fallback) {
    const json* v = find(j, key);
    if (!v) return fallback;
    if (!v->is_array()) fail(join_path(base, key), std::string("expected an array, got ") + v->type_name());
    std::vector<uint64_t> out;
    for (size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        std::string path = join_path(base, key) + "[" + std::to_string(i) + "]";
        if (e.is_number_unsigned()) {
            out.push_back(e.get<uint64_t>());
        } else if (e.is_number_integer()) {
            int64_t x = e.get<int64_t>();
            if (x < 0) fail(path, "expected a non-negative integer");
            out.push_back(static_cast<uint64_t>(x));
        } else {
            fail(path, std::string("expected an integer, got ") + e.type_name());
        }
    }
    return out;
}

// Accepts anything build_classifier can construct: smallcnn<width> or a
// residual backbone name.
void check_arch_name(const std::string& arch, const std::string& path) {
    if (arch.rfind("smallcnn", 0) == 0) {
        int width = 0;
        try {
            width = std::stoi(arch.substr(8));
        } catch (const std::exception&) {
            fail(path, "malformed small-cnn width in '" + arch + "'");
        }
        if (width < 1) fail(path, "small-cnn width must be positive in '" + arch + "'");
        return;
    }
    try {
        (void)arch::backbone_plan(arch);
    } catch (const std::exception& e) {
        fail(path, e.what());
    }
}

void check_milestones(const std::vector<int>& ms, int epochs, const std::string& what) {
    for (size_t i = 0; i < ms.size(); ++i) {
        if (i > 0 && ms[i] <= ms[i - 1])
            throw std::runtime_error("config: " + what + " must be strictly increasing");
        if (ms[i] < 0 || ms[i] >= epochs)
            throw std::runtime_error("config: " + what + ": milestone " + std::to_string(ms[i]) +
                                     " outside 0.." + std::to_string(epochs - 1));
    }
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["dataset"] = {
        {"name", c.dataset.name},
        {"root", c.dataset.root},
        {"input_h", c.dataset.input_h},
        {"input_w", c.dataset.input_w},
        {"classes", c.dataset.classes},
        {"train_fraction", c.dataset.train_fraction},
        {"split_seed", c.dataset.split_seed},
        {"synthetic_per_class", c.dataset.synthetic_per_class},
    };
    j["teachers"] = {
        {"arch", c.teachers.arch},
        {"count", c.teachers.count},
        {"seeds", c.teachers.seeds},
        {"epochs", c.teachers.epochs},
        {"batch_size", c.teachers.batch_size},
        {"lr", c.teachers.lr},
        {"momentum", c.teachers.momentum},
        {"weight_decay", c.teachers.weight_decay},
        {"lr_milestones", c.teachers.lr_milestones},
        {"lr_decay", c.teachers.lr_decay},
        {"accuracy_floor", c.teachers.accuracy_floor},
    };
    j["student"] = {
        {"backbone", c.student.backbone},
        {"headers", c.student.num_headers},
        {"feature_projection_dim", c.student.feature_projection_dim},
    };
    j["generator"] = {
        {"noise_dim", c.generator.noise_dim},
        {"base_channels", c.generator.base_channels},
        {"upsampling", arch::to_string(c.generator.upsampling)},
        {"output_block", arch::to_string(c.generator.output_block)},
    };
    j["weights"] = {
        {"alpha", c.weights.alpha},
        {"beta", c.weights.beta},
        {"gamma", c.weights.gamma},
    };
    j["schedule"] = {
        {"epochs", c.schedule.epochs},
        {"iterations", c.schedule.iterations},
        {"student_steps", c.schedule.student_steps},
        {"batch_size", c.schedule.batch_size},
        {"eta_s", c.schedule.eta_s},
        {"eta_g", c.schedule.eta_g},
        {"lr_milestones", c.schedule.lr_milestones},
        {"lr_decay", c.schedule.lr_decay},
        {"momentum", c.schedule.momentum},
        {"weight_decay", c.schedule.weight_decay},
        {"adam_beta1", c.schedule.adam_beta1},
        {"adam_beta2", c.schedule.adam_beta2},
    };
    j["attention"] = {
        {"subset_fraction", c.attention.subset_fraction},
        {"val_fraction", c.attention.val_fraction},
        {"epochs", c.attention.train.epochs},
        {"batch_size", c.attention.train.batch_size},
        {"lr", c.attention.train.lr},
        {"weight_decay", c.attention.train.weight_decay},
        {"beta1", c.attention.train.beta1},
        {"beta2", c.attention.train.beta2},
    };
    j["export"] = {
        {"rows", c.grid.rows},
        {"cols", c.grid.cols},
    };
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    return j;
}

} // namespace

ExperimentConfig default_config(const std::string& dataset_name) {
    ExperimentConfig c;
    c.dataset.name = dataset_name;
    c.output_dir = "runs/" + dataset_name;
    if (dataset_name == "cifar100") {
        c.dataset = {dataset_name, "", 32, 32, 100, 0.8, 1, 0};
        c.teachers = {"resnet34", 3, {}, 200, 128, 0.1, 0.9, 5e-4, {100, 150}, 0.1, 70.0};
        c.student = {"resnet18", 3, 100, 0};
        c.generator = {256, 32, 32, 3, 128, arch::UpsampleMode::NearestX2, arch::OutputBlock::TanhThenBn};
        c.weights = {5.0, 0.2, 0.1, 0.0};
        c.schedule = {300, 50, 5, 256, 0.1, 0.001, {100, 200}, 0.1, 0.9, 5e-4, 0.9, 0.999};
    } else if (dataset_name == "caltech101") {
        c.dataset = {dataset_name, "", 128, 128, 101, 0.8, 1, 0};
        c.teachers = {"resnet34", 3, {}, 100, 64, 0.1, 0.9, 5e-4, {50, 75}, 0.1, 60.0};
        c.student = {"resnet18", 3, 101, 0};
        c.generator = {256, 128, 128, 3, 128, arch::UpsampleMode::TransposedConvK4, arch::OutputBlock::TanhOnly};
        c.weights = {5.0, 0.2, 0.1, 0.0};
        c.schedule = {300, 50, 5, 64, 0.1, 0.001, {100, 200}, 0.1, 0.9, 5e-4, 0.9, 0.999};
    } else if (dataset_name == "mini_imagenet") {
        c.dataset = {dataset_name, "", 224, 224, 100, 0.8, 1, 0};
        c.teachers = {"resnet34", 3, {}, 100, 64, 0.1, 0.9, 5e-4, {50, 75}, 0.1, 50.0};
        c.student = {"resnet18", 3, 100, 0};
        c.generator = {256, 224, 224, 3, 128, arch::UpsampleMode::TransposedConvK4, arch::OutputBlock::TanhThenBn};
        c.weights = {1.0, 0.05, 0.1, 0.0};
        c.schedule = {100, 750, 5, 64, 0.1, 0.001, {30, 60, 90}, 0.1, 0.9, 5e-4, 0.9, 0.999};
    } else if (dataset_name == "desk") {
        c.dataset = {dataset_name, "", 32, 32, 10, 0.8, 7, 500};
        c.teachers = {"smallcnn8", 3, {}, 8, 64, 0.05, 0.9, 5e-4, {6}, 0.1, 90.0};
        c.student = {"tiny16", 3, 10, 32};
        c.generator = {64, 32, 32, 3, 64, arch::UpsampleMode::NearestX2, arch::OutputBlock::TanhThenBn};
        c.weights = {5.0, 0.2, 0.1, 0.0};
        c.schedule = {12, 40, 5, 32, 0.1, 0.001, {8}, 0.1, 0.9, 5e-4, 0.9, 0.999};
        c.attention.train.epochs = 15;
        c.attention.train.batch_size = 64;
    } else {
        throw std::runtime_error("config: dataset.name: unknown profile '" + dataset_name +
                                 "', expected one of desk, cifar100, caltech101, mini_imagenet");
    }
    return c;
}

void ExperimentConfig::validate() const {
    auto req = [](bool ok, const std::string& msg) {
        if (!ok) throw std::runtime_error("config: " + msg);
    };
    req(dataset.input_h > 0 && dataset.input_w > 0, "dataset input size must be positive");
    req(dataset.classes >= 2, "dataset needs at least two classes");
    req(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0,
        "dataset.train_fraction must lie strictly between 0 and 1");
    req(!dataset.root.empty() || dataset.name != "desk" || dataset.synthetic_per_class > 0,
        "dataset.synthetic_per_class must be positive when the desk profile synthesizes its data");

    req(teachers.count >= 1, "teachers.count: at least one teacher is required");
    req(teachers.seeds.empty() || static_cast<int>(teachers.seeds.size()) == teachers.count,
        "teachers.seeds must list exactly one seed per teacher (" + std::to_string(teachers.count) +
            " expected, " + std::to_string(teachers.seeds.size()) + " given)");
    req(teachers.epochs >= 0, "teachers.epochs must be non-negative");
    req(teachers.batch_size >= 1, "teachers.batch_size must be at least 1");
    req(std::isfinite(teachers.lr) && teachers.lr > 0.0, "teachers.lr must be positive");
    req(teachers.momentum >= 0.0 && teachers.weight_decay >= 0.0,
        "teachers momentum and weight_decay must be non-negative");
    req(std::isfinite(teachers.lr_decay) && teachers.lr_decay > 0.0, "teachers.lr_decay must be positive");
    req(teachers.accuracy_floor >= 0.0 && teachers.accuracy_floor <= 100.0,
        "teachers.accuracy_floor is a percentage in 0..100");
    check_milestones(teachers.lr_milestones, teachers.epochs, "teachers.lr_milestones");
    check_arch_name(teachers.arch, "teachers.arch");

    student.validate();
    req(student.num_classes == dataset.classes, "student class count must mirror the dataset");
    generator.validate();
    req(generator.out_h == dataset.input_h && generator.out_w == dataset.input_w,
        "generator output size must mirror the dataset input");
    weights.validate();
    schedule.validate();
    attention.train.validate();
    req(attention.subset_fraction >= 0.0 && attention.subset_fraction <= 1.0,
        "attention.subset_fraction must lie in [0,1]");
    req(attention.val_fraction >= 0.0 && attention.val_fraction < 1.0,
        "attention.val_fraction must lie in [0,1)");
    req(grid.rows >= 1 && grid.cols >= 1, "export grid needs at least one row and one column");
}

std::string ExperimentConfig::canonical_json() const { return config_to_json(*this).dump(2); }

std::string ExperimentConfig::config_hash() const {
    json j = config_to_json(*this);
    j.erase("output_dir");
    return hash_hex(fnv1a64_str(j.dump(2)));
}

ExperimentConfig config_from_json_text(const std::string& text, const std::string& origin) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos)
        throw std::runtime_error("config: " + origin +
                                 " is empty; at minimum set dataset.name to one of "
                                 "desk, cifar100, caltech101, mini_imagenet");
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw std::runtime_error("config: " + origin + ": " + e.what());
    }
    if (!j.is_object()) fail("", std::string("expected an object, got ") + j.type_name());
    check_keys(j, "", {"dataset", "teachers", "student", "generator", "weights", "schedule",
                       "attention", "export", "seed", "output_dir"});

    const json* jd = find_object(j, "", "dataset");
    if (!jd) fail("dataset", "missing; dataset.name selects the profile");
    check_keys(*jd, "dataset", {"name", "root", "input_h", "input_w", "classes", "train_fraction",
                                "split_seed", "synthetic_per_class"});
    std::string name = get_string(*jd, "dataset", "name", "");
    if (name.empty())
        fail("dataset.name", "missing; expected one of desk, cifar100, caltech101, mini_imagenet");

    ExperimentConfig c = default_config(name);
    c.dataset.root = get_string(*jd, "dataset", "root", c.dataset.root);
    c.dataset.input_h = get_int(*jd, "dataset", "input_h", c.dataset.input_h);
    c.dataset.input_w = get_int(*jd, "dataset", "input_w", c.dataset.input_w);
    c.dataset.classes = get_int(*jd, "dataset", "classes", c.dataset.classes);
    c.dataset.train_fraction = get_double(*jd, "dataset", "train_fraction", c.dataset.train_fraction);
    c.dataset.split_seed = get_u64(*jd, "dataset", "split_seed", c.dataset.split_seed);
    c.dataset.synthetic_per_class = get_int(*jd, "dataset", "synthetic_per_class", c.dataset.synthetic_per_class);

    if (const json* jt = find_object(j, "", "teachers")) {
        check_keys(*jt, "teachers", {"arch", "count", "seeds", "epochs", "batch_size", "lr", "momentum",
                                     "weight_decay", "lr_milestones", "lr_decay", "accuracy_floor"});
        c.teachers.arch = get_string(*jt, "teachers", "arch", c.teachers.arch);
        c.teachers.count = get_int(*jt, "teachers", "count", c.teachers.count);
        c.teachers.seeds = get_u64_list(*jt, "teachers", "seeds", c.teachers.seeds);
        c.teachers.epochs = get_int(*jt, "teachers", "epochs", c.teachers.epochs);
        c.teachers.batch_size = get_int(*jt, "teachers", "batch_size", c.teachers.batch_size);
        c.teachers.lr = get_double(*jt, "teachers", "lr", c.teachers.lr);
        c.teachers.momentum = get_double(*jt, "teachers", "momentum", c.teachers.momentum);
        c.teachers.weight_decay = get_double(*jt, "teachers", "weight_decay", c.teachers.weight_decay);
        c.teachers.lr_milestones = get_int_list(*jt, "teachers", "lr_milestones", c.teachers.lr_milestones);
        c.teachers.lr_decay = get_double(*jt, "teachers", "lr_decay", c.teachers.lr_decay);
        c.teachers.accuracy_floor = get_double(*jt, "teachers", "accuracy_floor", c.teachers.accuracy_floor);
    }

    if (const json* js = find_object(j, "", "student")) {
        check_keys(*js, "student", {"backbone", "headers", "feature_projection_dim"});
        c.student.backbone = get_string(*js, "student", "backbone", c.student.backbone);
        c.student.num_headers = get_int(*js, "student", "headers", c.student.num_headers);
        c.student.feature_projection_dim =
            get_int(*js, "student", "feature_projection_dim", c.student.feature_projection_dim);
    }

    if (const json* jg = find_object(j, "", "generator")) {
        check_keys(*jg, "generator", {"noise_dim", "base_channels", "upsampling", "output_block"});
        c.generator.noise_dim = get_int(*jg, "generator", "noise_dim", c.generator.noise_dim);
        c.generator.base_channels = get_int(*jg, "generator", "base_channels", c.generator.base_channels);
        std::string up = get_string(*jg, "generator", "upsampling", arch::to_string(c.generator.upsampling));
        std::string ob = get_string(*jg, "generator", "output_block", arch::to_string(c.generator.output_block));
        try {
            c.generator.upsampling = arch::upsample_mode_from_string(up);
        } catch (const std::exception& e) {
            fail("generator.upsampling", e.what());
        }
        try {
            c.generator.output_block = arch::output_block_from_string(ob);
        } catch (const std::exception& e) {
            fail("generator.output_block", e.what());
        }
    }

    if (const json* jw = find_object(j, "", "weights")) {
        check_keys(*jw, "weights", {"alpha", "beta", "gamma"});
        c.weights.alpha = get_double(*jw, "weights", "alpha", c.weights.alpha);
        c.weights.beta = get_double(*jw, "weights", "beta", c.weights.beta);
        c.weights.gamma = get_double(*jw, "weights", "gamma", c.weights.gamma);
    }

    if (const json* js = find_object(j, "", "schedule")) {
        check_keys(*js, "schedule", {"epochs", "iterations", "student_steps", "batch_size", "eta_s", "eta_g",
                                     "lr_milestones", "lr_decay", "momentum", "weight_decay", "adam_beta1",
                                     "adam_beta2"});
        c.schedule.epochs = get_int(*js, "schedule", "epochs", c.schedule.epochs);
        c.schedule.iterations = get_int(*js, "schedule", "iterations", c.schedule.iterations);
        c.schedule.student_steps = get_int(*js, "schedule", "student_steps", c.schedule.student_steps);
        c.schedule.batch_size = get_int(*js, "schedule", "batch_size", c.schedule.batch_size);
        c.schedule.eta_s = get_double(*js, "schedule", "eta_s", c.schedule.eta_s);
        c.schedule.eta_g = get_double(*js, "schedule", "eta_g", c.schedule.eta_g);
        c.schedule.lr_milestones = get_int_list(*js, "schedule", "lr_milestones", c.schedule.lr_milestones);
        c.schedule.lr_decay = get_double(*js, "schedule", "lr_decay", c.schedule.lr_decay);
        c.schedule.momentum = get_double(*js, "schedule", "momentum", c.schedule.momentum);
        c.schedule.weight_decay = get_double(*js, "schedule", "weight_decay", c.schedule.weight_decay);
        c.schedule.adam_beta1 = get_double(*js, "schedule", "adam_beta1", c.schedule.adam_beta1);
        c.schedule.adam_beta2 = get_double(*js, "schedule", "adam_beta2", c.schedule.adam_beta2);
    }

    if (const json* ja = find_object(j, "", "attention")) {
        check_keys(*ja, "attention", {"subset_fraction", "val_fraction", "epochs", "batch_size", "lr",
                                      "weight_decay", "beta1", "beta2"});
        c.attention.subset_fraction = get_double(*ja, "attention", "subset_fraction", c.attention.subset_fraction);
        c.attention.val_fraction = get_double(*ja, "attention", "val_fraction", c.attention.val_fraction);
        c.attention.train.epochs = get_int(*ja, "attention", "epochs", c.attention.train.epochs);
        c.attention.train.batch_size = get_int(*ja, "attention", "batch_size", c.attention.train.batch_size);
        c.attention.train.lr = get_double(*ja, "attention", "lr", c.attention.train.lr);
        c.attention.train.weight_decay = get_double(*ja, "attention", "weight_decay", c.attention.train.weight_decay);
        c.attention.train.beta1 = get_double(*ja, "attention", "beta1", c.attention.train.beta1);
        c.attention.train.beta2 = get_double(*ja, "attention", "beta2", c.attention.train.beta2);
    }

    if (const json* je = find_object(j, "", "export")) {
        check_keys(*je, "export", {"rows", "cols"});
        c.grid.rows = get_int(*je, "export", "rows", c.grid.rows);
        c.grid.cols = get_int(*je, "export", "cols", c.grid.cols);
    }

    c.seed = get_u64(j, "", "seed", c.seed);
    c.output_dir = get_string(j, "", "output_dir", c.output_dir);

    // Derived fields: the student classifies the dataset's classes and the
    // generator fills the dataset's input size. Neither is a separate knob.
    c.student.num_classes = c.dataset.classes;
    c.generator.out_h = c.dataset.input_h;
    c.generator.out_w = c.dataset.input_w;
    c.generator.out_c = 3;

    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return config_from_json_text(ss.str(), path);
}

Command command_from_string(const std::string& name) {
    if (name == "pretrain") return Command::Pretrain;
    if (name == "distill") return Command::Distill;
    if (name == "attention") return Command::Attention;
    if (name == "eval") return Command::Eval;
    if (name == "export-samples") return Command::ExportSamples;
    if (name == "count") return Command::Count;
    if (name == "confusion") return Command::Confusion;
    if (name == "gradcam") return Command::Gradcam;
    throw std::runtime_error("pipeline: unknown command '" + name +
                             "', expected one of pretrain, distill, attention, eval, "
                             "export-samples, count, confusion, gradcam");
}

} // namespace pipeline
} // namespace dfkd
