#include "pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "arch/generator.hpp"
#include "arch/student.hpp"
#include "arch/teacher.hpp"
#include "core/graph.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"
#include "eval/eval.hpp"
#include "nn/optim.hpp"

namespace dfkd {
namespace pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::runtime_error("pipeline: " + msg);
}

// Relative output directories land under DFKD_OUTPUT_ROOT when it is set, so
// a whole run family can be redirected without touching the configs.
fs::path out_root(const ExperimentConfig& cfg) {
    fs::path dir = cfg.output_dir;
    if (dir.is_relative()) {
        if (const char* base = std::getenv("DFKD_OUTPUT_ROOT")) {
            if (*base) dir = fs::path(base) / dir;
        }
    }
    return dir;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        require(os.good(), "cannot open " + tmp.string() + " for writing");
        os << text;
        os.flush();
        require(os.good(), "failed while writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    require(!ec, "cannot move " + tmp.string() + " into place: " + ec.message());
}

void write_json_file(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

json read_json_file(const fs::path& path, const std::string& what) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "cannot open " + what + " at " + path.string());
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("pipeline: " + what + " at " + path.string() + " is unreadable: " + e.what());
    }
    return j;
}

// The canonical config plus its hash, dropped next to every run's artifacts.
void write_config_snapshot(const ExperimentConfig& cfg, const fs::path& root) {
    json j = json::parse(cfg.canonical_json());
    j["config_hash"] = cfg.config_hash();
    write_json_file(root / "config.json", j);
}

Tensor slice_batch(const Tensor& images, int start, int bsz) {
    int c = images.size(1), h = images.size(2), w = images.size(3);
    Tensor out({bsz, c, h, w});
    for (int r = 0; r < bsz; ++r)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(r, ch, y, x) = images.at(start + r, ch, y, x);
    return out;
}

// Per-sample logits of one classifier over a whole split, batched, eval mode.
Tensor model_logits(arch::ClassifierNet& net, const Tensor& images, int classes, int batch_size) {
    net.set_training(false);
    int m = images.size(0);
    Tensor logits({m, classes});
    for (int start = 0; start < m; start += batch_size) {
        int bsz = std::min(batch_size, m - start);
        Tape t;
        arch::NetOutput out = net.forward(t, make_constant(slice_batch(images, start, bsz)), false);
        for (int r = 0; r < bsz; ++r)
            for (int k = 0; k < classes; ++k) logits.at(start + r, k) = out.logits->value.at(r, k);
    }
    return logits;
}

// One supervised recipe for every teacher: cross entropy under SGD with
// momentum and milestone decays, each drawn sample flipped left-right with
// probability one half.
void train_classifier(arch::ClassifierNet& net, const data::Dataset& train, const TeacherPlan& plan, Rng& rng) {
    net.set_training(true);
    nn::Sgd opt(net.parameters(), plan.lr, plan.momentum, plan.weight_decay);
    double lr = plan.lr;
    const int m = train.count();
    const int c = train.images.size(1), h = train.images.size(2), w = train.images.size(3);
    std::vector<int> order(static_cast<size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        for (int ms : plan.lr_milestones) {
            if (epoch == ms) {
                lr *= plan.lr_decay;
                opt.set_lr(lr);
            }
        }
        rng.shuffle(order);
        for (int start = 0; start < m; start += plan.batch_size) {
            int bsz = std::min(plan.batch_size, m - start);
            Tensor batch({bsz, c, h, w});
            std::vector<int> labels(static_cast<size_t>(bsz));
            for (int r = 0; r < bsz; ++r) {
                int idx = order[static_cast<size_t>(start + r)];
                bool flip = rng.uniform() < 0.5;
                for (int ch = 0; ch < c; ++ch)
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            batch.at(r, ch, y, x) = train.images.at(idx, ch, y, flip ? w - 1 - x : x);
                labels[static_cast<size_t>(r)] = train.labels[static_cast<size_t>(idx)];
            }
            Tape t;
            arch::NetOutput out = net.forward(t, make_constant(batch), false);
            Var loss = ops::mean_all(ops::cross_entropy_vec(out.logits, labels));
            require(std::isfinite(loss->scalar_value()),
                    "teacher training diverged at epoch " + std::to_string(epoch) + "; lower teachers.lr");
            opt.zero_grad();
            t.backward(loss);
            opt.step();
        }
    }
}

std::vector<uint64_t> teacher_seeds(const ExperimentConfig& cfg) {
    if (!cfg.teachers.seeds.empty()) return cfg.teachers.seeds;
    std::vector<uint64_t> seeds(static_cast<size_t>(cfg.teachers.count));
    for (size_t i = 0; i < seeds.size(); ++i) seeds[i] = cfg.seed + 101 + i;
    return seeds;
}

// Rebuilds the frozen ensemble from the pretraining artifacts. Everything a
// later stage needs is checked here so the error names the fix.
arch::TeacherBundle load_teachers(const ExperimentConfig& cfg, const fs::path& root) {
    fs::path dir = root / "teachers";
    fs::path manifest_path = dir / "manifest.json";
    require(fs::exists(manifest_path),
            "no pretrained teachers under " + dir.string() + "; run the pretrain command first");
    json man = read_json_file(manifest_path, "teacher manifest");
    std::string arch_name = man.value("arch", std::string());
    int classes = man.value("classes", 0);
    size_t count = man.contains("teachers") ? man["teachers"].size() : 0;
    require(arch_name == cfg.teachers.arch && classes == cfg.dataset.classes &&
                count == static_cast<size_t>(cfg.teachers.count),
            "the teacher manifest at " + manifest_path.string() + " was written for " +
                std::to_string(count) + " x " + arch_name + " over " + std::to_string(classes) +
                " classes, but the config asks for " + std::to_string(cfg.teachers.count) + " x " +
                cfg.teachers.arch + " over " + std::to_string(cfg.dataset.classes) +
                "; re-run the pretrain command");

    arch::TeacherBundle bundle;
    arch::TeacherSpec tspec{cfg.teachers.arch, cfg.dataset.classes};
    for (size_t i = 0; i < count; ++i) {
        std::string file = man["teachers"][i].value("file", std::string());
        require(!file.empty(), "teacher manifest entry " + std::to_string(i) + " names no file");
        Rng scratch(0);
        auto net = arch::build_classifier(tspec, scratch);
        net->load_state((dir / file).string());
        bundle.teachers.push_back(std::move(net));
    }
    bundle.num_classes = cfg.dataset.classes;
    bundle.feature_dim = bundle.teachers.front()->feature_dim();
    bundle.freeze();
    return bundle;
}

struct Models {
    std::unique_ptr<arch::MultiHeadStudent> student;
    std::unique_ptr<arch::Generator> generator;
};

// Student first, generator second, from one stream: the initialization is a
// pure function of the run seed.
Models build_models(const ExperimentConfig& cfg) {
    Rng init(cfg.seed + 1);
    Models m;
    m.student = std::make_unique<arch::MultiHeadStudent>(cfg.student, init);
    m.generator = std::make_unique<arch::Generator>(cfg.generator, init);
    return m;
}

Models load_distilled(const ExperimentConfig& cfg, const fs::path& root) {
    fs::path fin = root / "distill" / "final";
    require(fs::exists(fin / "student.bin") && fs::exists(fin / "generator.bin"),
            "no distilled models under " + fin.string() + "; run the distill command first");
    Models m = build_models(cfg);
    m.student->load_state((fin / "student.bin").string());
    m.generator->load_state((fin / "generator.bin").string());
    return m;
}

std::string format_percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", v);
    return buf;
}

std::string run_pretrain(const ExperimentConfig& cfg, const fs::path& root) {
    Splits s = ingest(cfg);
    fs::path dir = root / "teachers";
    fs::create_directories(dir);

    std::vector<uint64_t> seeds = teacher_seeds(cfg);
    json entries = json::array();
    json warnings = json::array();
    std::vector<Tensor> split_logits;
    double best_single = 0.0;
    for (int i = 0; i < cfg.teachers.count; ++i) {
        Rng rng(seeds[static_cast<size_t>(i)]);
        auto net = arch::build_classifier({cfg.teachers.arch, cfg.dataset.classes}, rng);
        train_classifier(*net, s.train, cfg.teachers, rng);
        Tensor logits = model_logits(*net, s.test.images, cfg.dataset.classes, 64);
        double acc = eval::accuracy_percent(logits, s.test.labels);
        split_logits.push_back(logits);
        best_single = std::max(best_single, acc);

        std::string file = "teacher_" + std::to_string(i) + ".bin";
        net->save_state((dir / file).string());
        entries.push_back({{"seed", seeds[static_cast<size_t>(i)]},
                           {"file", file},
                           {"test_accuracy_percent", acc},
                           {"state_hash", hash_hex(net->state_hash())}});
        if (acc < cfg.teachers.accuracy_floor)
            warnings.push_back("teacher " + std::to_string(i) + " scored " + format_percent(acc) +
                               ", under the " + format_percent(cfg.teachers.accuracy_floor) + " floor");
    }
    double ens = eval::ensemble_accuracy_percent(split_logits, s.test.labels);

    json man;
    man["config_hash"] = cfg.config_hash();
    man["arch"] = cfg.teachers.arch;
    man["classes"] = cfg.dataset.classes;
    man["input"] = {cfg.dataset.input_h, cfg.dataset.input_w};
    man["train_samples"] = s.train.count();
    man["test_samples"] = s.test.count();
    man["teachers"] = entries;
    man["best_single_accuracy_percent"] = best_single;
    man["ensemble_accuracy_percent"] = ens;
    man["warnings"] = warnings;
    write_json_file(dir / "manifest.json", man);

    std::string summary = "pretrained " + std::to_string(cfg.teachers.count) + " x " + cfg.teachers.arch +
                          "; best single " + format_percent(best_single) + ", ensemble " + format_percent(ens) +
                          " on " + std::to_string(s.test.count()) + " held-out samples";
    if (!warnings.empty()) summary += "; " + std::to_string(warnings.size()) + " accuracy warning(s), see manifest";
    return summary;
}

std::string run_distill(const ExperimentConfig& cfg, const fs::path& root, const RunOptions& opts) {
    arch::TeacherBundle teachers = load_teachers(cfg, root);
    Models m = build_models(cfg);
    distill::Distiller d(*m.student, *m.generator, teachers, cfg.weights, cfg.schedule, cfg.seed);

    fs::path ddir = root / "distill";
    if (opts.resume_checkpoint.empty()) {
        // A fresh run owns the whole directory; the metrics log appends, so
        // anything left from an earlier run has to go.
        fs::remove_all(ddir);
    } else {
        d.resume(opts.resume_checkpoint);
    }
    fs::create_directories(ddir);
    d.run(ddir.string());
    d.save_checkpoint((ddir / "final").string());

    json run;
    run["config_hash"] = cfg.config_hash();
    run["seed"] = cfg.seed;
    run["epochs_completed"] = d.state().epoch;
    run["iterations_completed"] = d.state().iteration;
    if (!opts.resume_checkpoint.empty()) run["resumed_from"] = opts.resume_checkpoint;
    write_json_file(ddir / "run.json", run);

    char tail[128];
    std::snprintf(tail, sizeof tail, "; last epoch mean: student %.4f, generator %.4f",
                  d.state().epoch_mean.student_total, d.state().epoch_mean.generator_total);
    return "distilled " + std::to_string(d.state().epoch) + " epoch(s) x " +
           std::to_string(cfg.schedule.iterations) + " iteration(s)" + tail;
}

std::string run_attention(const ExperimentConfig& cfg, const fs::path& root) {
    require(cfg.attention.subset_fraction > 0.0,
            "attention.subset_fraction is 0, so there are no real samples to tune the query on; "
            "skip this stage and keep the data-free average aggregation (a zero query already "
            "weighs all headers equally)");
    arch::TeacherBundle teachers = load_teachers(cfg, root);
    Models m = load_distilled(cfg, root);
    Splits s = ingest(cfg);

    data::Dataset subset = data::stratified_subset(s.train, cfg.attention.subset_fraction,
                                                   cfg.dataset.split_seed + 1);
    require(subset.count() > 0, "the real subset came out empty; raise attention.subset_fraction");
    data::Dataset fit = subset, val;
    if (cfg.attention.val_fraction > 0.0)
        data::split_stratified(subset, 1.0 - cfg.attention.val_fraction, cfg.dataset.split_seed + 2, fit, val);

    attention::AttentionHead head(m.student->feature_dim(), cfg.dataset.classes);
    Rng rng(cfg.seed + 3);
    attention::AttentionTrainResult res = attention::train_attention(
        head, *m.student, *m.generator, teachers, fit.images, fit.labels, val.images, val.labels,
        cfg.attention.train, rng);

    fs::path adir = root / "attention";
    fs::create_directories(adir);
    head.save((adir / "query.json").string(), m.student->structure_hash());

    json man;
    man["config_hash"] = cfg.config_hash();
    man["subset_samples"] = subset.count();
    man["fit_samples"] = fit.count();
    man["val_samples"] = val.count();
    man["best_epoch"] = res.best_epoch;
    man["best_loss"] = res.best_loss;
    man["train_losses"] = res.train_losses;
    man["val_losses"] = res.val_losses;
    write_json_file(adir / "manifest.json", man);

    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "tuned the aggregation query on %d real sample(s) (%d held out); kept epoch %d at loss %.4f",
                  fit.count(), val.count(), res.best_epoch, res.best_loss);
    return buf;
}

std::string run_eval(const ExperimentConfig& cfg, const fs::path& root) {
    arch::TeacherBundle teachers = load_teachers(cfg, root);
    Models m = load_distilled(cfg, root);
    Splits s = ingest(cfg);

    eval::EvalReport rep;
    fs::path query = root / "attention" / "query.json";
    if (fs::exists(query)) {
        attention::AttentionHead head =
            attention::AttentionHead::load(query.string(), m.student->structure_hash());
        rep = eval::evaluate(*m.student, teachers, s.test.images, s.test.labels, &head);
    } else {
        rep = eval::evaluate(*m.student, teachers, s.test.images, s.test.labels, nullptr);
    }

    json j = json::parse(rep.json());
    j["config_hash"] = cfg.config_hash();
    j["test_samples"] = s.test.count();
    write_json_file(root / "eval" / "report.json", j);

    std::string summary = "evaluated on " + std::to_string(s.test.count()) + " samples: student ensemble " +
                          format_percent(rep.ensemble_acc);
    if (rep.has_attention) summary += ", attention " + format_percent(rep.attention_acc);
    summary += ", teacher ensemble " + format_percent(rep.teacher_ensemble_acc);
    return summary;
}

std::string run_export(const ExperimentConfig& cfg, const fs::path& root) {
    Models m = load_distilled(cfg, root);
    fs::path file = root / "samples" / "grid.ppm";
    fs::create_directories(file.parent_path());
    eval::export_sample_grid(*m.generator, cfg.grid.rows, cfg.grid.cols, cfg.seed, file.string());

    json man;
    man["config_hash"] = cfg.config_hash();
    man["rows"] = cfg.grid.rows;
    man["cols"] = cfg.grid.cols;
    man["seed"] = cfg.seed;
    man["file"] = "grid.ppm";
    write_json_file(root / "samples" / "manifest.json", man);
    return "wrote a " + std::to_string(cfg.grid.rows) + "x" + std::to_string(cfg.grid.cols) +
           " generated sample grid to " + file.string();
}

std::string run_count(const ExperimentConfig& cfg, const fs::path& root) {
    int h = cfg.dataset.input_h, w = cfg.dataset.input_w;
    eval::ModelCost student = eval::student_cost(cfg.student, h, w);
    eval::ModelCost teacher = eval::classifier_cost({cfg.teachers.arch, cfg.dataset.classes}, h, w);
    eval::ModelCost backbone = eval::classifier_cost({cfg.student.backbone, cfg.dataset.classes}, h, w);

    fs::path dir = root / "count";
    std::string hash = cfg.config_hash();
    auto wrap = [&hash](const eval::ModelCost& c) {
        json j = json::parse(c.json());
        j["config_hash"] = hash;
        return j;
    };
    write_json_file(dir / "student.json", wrap(student));
    write_json_file(dir / "teacher.json", wrap(teacher));
    write_json_file(dir / "backbone.json", wrap(backbone));

    json sum;
    sum["config_hash"] = hash;
    sum["input"] = {h, w};
    sum["student"] = {{"params", student.params}, {"macs", student.macs}};
    sum["teacher"] = {{"params", teacher.params}, {"macs", teacher.macs}};
    sum["backbone"] = {{"params", backbone.params}, {"macs", backbone.macs}};
    double overhead = backbone.macs > 0
                          ? static_cast<double>(student.macs - backbone.macs) / static_cast<double>(backbone.macs)
                          : 0.0;
    sum["sharing_overhead_macs_fraction"] = overhead;
    write_json_file(dir / "summary.json", sum);

    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "student %lld params / %lld macs; plain %s %lld params / %lld macs (sharing overhead %.1f%%); "
                  "teacher %lld params / %lld macs",
                  static_cast<long long>(student.params), static_cast<long long>(student.macs),
                  cfg.student.backbone.c_str(), static_cast<long long>(backbone.params),
                  static_cast<long long>(backbone.macs), overhead * 100.0,
                  static_cast<long long>(teacher.params), static_cast<long long>(teacher.macs));
    return buf;
}

std::string run_confusion(const ExperimentConfig& cfg, const fs::path& root) {
    arch::TeacherBundle teachers = load_teachers(cfg, root);
    Models m = load_distilled(cfg, root);
    Splits s = ingest(cfg);

    // Both matrices are judged by the first teacher: real samples keyed by
    // their labels, generated ones by that teacher's own top prediction.
    arch::ClassifierNet& scorer = *teachers.teachers.front();
    eval::ConfusionRecord real =
        eval::confusion_matrix(scorer, s.test.images, s.test.labels, eval::RowLabel::GroundTruth);

    int n = std::min(s.test.count(), 1024);
    int hh = cfg.dataset.input_h, ww = cfg.dataset.input_w;
    Tensor generated({n, 3, hh, ww});
    m.generator->set_training(false);
    Rng rng(cfg.seed + 4);
    for (int start = 0; start < n; start += 64) {
        int bsz = std::min(64, n - start);
        Tensor z({bsz, cfg.generator.noise_dim});
        rng.fill_normal(z);
        Tape t;
        Var img = m.generator->forward(t, make_constant(z));
        for (int r = 0; r < bsz; ++r)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < hh; ++y)
                    for (int x = 0; x < ww; ++x) generated.at(start + r, c, y, x) = img->value.at(r, c, y, x);
    }
    eval::ConfusionRecord gen =
        eval::confusion_matrix(scorer, generated, {}, eval::RowLabel::ModelArgmax);

    fs::path dir = root / "confusion";
    fs::create_directories(dir);
    real.write_csv((dir / "real.csv").string());
    gen.write_csv((dir / "generated.csv").string());

    double off_real = real.off_diagonal_fraction();
    double off_gen = gen.off_diagonal_fraction();
    json sum;
    sum["config_hash"] = cfg.config_hash();
    sum["samples_real"] = s.test.count();
    sum["samples_generated"] = n;
    sum["off_diagonal_real"] = off_real;
    sum["off_diagonal_generated"] = off_gen;
    sum["generated_to_real_ratio"] = off_real > 0.0 ? off_gen / off_real : 0.0;
    write_json_file(dir / "summary.json", sum);

    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "generated samples spread %.1f%% of their predictive mass off the diagonal vs %.1f%% for "
                  "real ones (ratio %.2f)",
                  off_gen * 100.0, off_real * 100.0, off_real > 0.0 ? off_gen / off_real : 0.0);
    return buf;
}

// A [0,1] heat map becomes a full-range grayscale raster.
void write_heatmap(const Tensor& map, const fs::path& path) {
    int h = map.size(0), w = map.size(1);
    Tensor chw({1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) chw.at(0, y, x) = map.at(y, x) * 2.0 - 1.0;
    data::write_raster(path.string(), data::raster_from_chw(chw));
}

std::string run_gradcam(const ExperimentConfig& cfg, const fs::path& root) {
    arch::TeacherBundle teachers = load_teachers(cfg, root);
    Models m = load_distilled(cfg, root);
    Splits s = ingest(cfg);

    // One fixed probe keeps reruns comparable: the first held-out sample,
    // explained at its own label.
    Tensor probe = data::slice_sample(s.test.images, 0);
    int label = s.test.labels.front();

    fs::path dir = root / "gradcam";
    fs::create_directories(dir);
    data::write_raster((dir / "probe.ppm").string(), data::raster_from_chw(probe));

    json files = json::array();
    files.push_back("probe.ppm");
    Tensor tmap = eval::gradcam_map(*teachers.teachers.front(), probe, label);
    write_heatmap(tmap, dir / "teacher.pgm");
    files.push_back("teacher.pgm");
    for (int hdr = 0; hdr < m.student->num_headers(); ++hdr) {
        Tensor hmap = eval::gradcam_map_header(*m.student, probe, hdr, label);
        std::string name = "header_" + std::to_string(hdr) + ".pgm";
        write_heatmap(hmap, dir / name);
        files.push_back(name);
    }

    json man;
    man["config_hash"] = cfg.config_hash();
    man["sample_index"] = 0;
    man["label"] = label;
    man["class_name"] = s.test.class_names[static_cast<size_t>(label)];
    man["files"] = files;
    write_json_file(dir / "manifest.json", man);

    return "wrote activation maps for one probe sample (class " +
           s.test.class_names[static_cast<size_t>(label)] + "): the first teacher plus " +
           std::to_string(m.student->num_headers()) + " student header(s)";
}

} // namespace

Splits ingest(const ExperimentConfig& cfg) {
    const DatasetPlan& d = cfg.dataset;
    data::Dataset all;
    if (d.root.empty()) {
        require(d.name == "desk", "dataset '" + d.name +
                                      "' needs dataset.root pointing at per-class image directories; only the "
                                      "desk profile synthesizes its own data");
        all = data::make_synthetic(d.classes, d.synthetic_per_class, d.input_h, d.input_w, d.split_seed);
    } else {
        all = data::load_image_tree(d.root, d.input_h, d.input_w);
        require(all.classes() == d.classes, "the tree at " + d.root + " holds " +
                                                std::to_string(all.classes()) + " classes but the config says " +
                                                std::to_string(d.classes));
        require(all.images.size(1) == 3, "expected 3-channel images, got " + std::to_string(all.images.size(1)) +
                                             " channel(s) from " + d.root);
    }
    Splits s;
    data::split_stratified(all, d.train_fraction, d.split_seed, s.train, s.test);
    require(s.train.count() > 0 && s.test.count() > 0,
            "the stratified split left one side empty; adjust dataset.train_fraction");
    return s;
}

std::string run_command(const ExperimentConfig& cfg, Command cmd, const RunOptions& opts) {
    cfg.validate();
    fs::path root = out_root(cfg);
    fs::create_directories(root);
    write_config_snapshot(cfg, root);
    switch (cmd) {
        case Command::Pretrain: return run_pretrain(cfg, root);
        case Command::Distill: return run_distill(cfg, root, opts);
        case Command::Attention: return run_attention(cfg, root);
        case Command::Eval: return run_eval(cfg, root);
        case Command::ExportSamples: return run_export(cfg, root);
        case Command::Count: return run_count(cfg, root);
        case Command::Confusion: return run_confusion(cfg, root);
        case Command::Gradcam: return run_gradcam(cfg, root);
    }
    throw std::runtime_error("pipeline: unhandled command");
}

} // namespace pipeline
} // namespace dfkd
