#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "eval/eval.hpp"
#include "pipeline/pipeline.hpp"

using namespace dfkd;
using namespace dfkd::pipeline;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "dfkd_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

json read_json(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    json j;
    is >> j;
    return j;
}

// Desk-profile experiment shrunk until every stage runs in seconds: fewer and
// smaller classes, two teachers, two headers, a two-epoch distillation.
ExperimentConfig mini_config(const std::string& out_dir) {
    std::string text = R"({
        "dataset": {"name": "desk", "classes": 4, "input_h": 16, "input_w": 16,
                    "synthetic_per_class": 40, "split_seed": 5},
        "teachers": {"arch": "smallcnn4", "count": 2, "epochs": 2, "batch_size": 16,
                     "lr": 0.05, "lr_milestones": [], "accuracy_floor": 0.0},
        "student": {"backbone": "tiny8", "headers": 2, "feature_projection_dim": 16},
        "generator": {"noise_dim": 32, "base_channels": 32},
        "schedule": {"epochs": 2, "iterations": 3, "student_steps": 2, "batch_size": 8,
                     "lr_milestones": [1]},
        "attention": {"subset_fraction": 0.5, "val_fraction": 0.25, "epochs": 2, "batch_size": 16},
        "export": {"rows": 2, "cols": 3},
        "seed": 11
    })";
    ExperimentConfig cfg = config_from_json_text(text, "inline");
    cfg.output_dir = out_dir;
    return cfg;
}

} // namespace

TEST_CASE("pipeline: dataset profiles carry their published settings") {
    ExperimentConfig c = default_config("cifar100");
    CHECK(c.dataset.input_h == 32);
    CHECK(c.dataset.classes == 100);
    CHECK(c.teachers.arch == "resnet34");
    CHECK(c.teachers.count == 3);
    CHECK(c.student.backbone == "resnet18");
    CHECK(c.student.num_headers == 3);
    CHECK(c.weights.alpha == 5.0);
    CHECK(c.weights.beta == 0.2);
    CHECK(c.weights.gamma == 0.1);
    CHECK(c.schedule.epochs == 300);
    CHECK(c.schedule.iterations == 50);
    CHECK(c.schedule.student_steps == 5);
    CHECK(c.schedule.batch_size == 256);
    CHECK(c.schedule.eta_s == 0.1);
    CHECK(c.schedule.eta_g == 0.001);
    CHECK(c.schedule.lr_milestones == std::vector<int>{100, 200});
    CHECK(c.generator.noise_dim == 256);
    CHECK(c.generator.upsampling == arch::UpsampleMode::NearestX2);
    CHECK(c.generator.output_block == arch::OutputBlock::TanhThenBn);
    CHECK(c.attention.train.batch_size == 128);
    CHECK(c.attention.train.lr == 0.01);
    CHECK(c.attention.train.weight_decay == 1e-4);

    ExperimentConfig ct = default_config("caltech101");
    CHECK(ct.dataset.input_h == 128);
    CHECK(ct.dataset.classes == 101);
    CHECK(ct.schedule.batch_size == 64);
    CHECK(ct.schedule.epochs == 300);
    CHECK(ct.weights.alpha == 5.0);
    CHECK(ct.generator.upsampling == arch::UpsampleMode::TransposedConvK4);
    // The only profile whose generator ends at the activation, without the
    // trailing normalization.
    CHECK(ct.generator.output_block == arch::OutputBlock::TanhOnly);

    ExperimentConfig cm = default_config("mini_imagenet");
    CHECK(cm.dataset.input_h == 224);
    CHECK(cm.dataset.classes == 100);
    CHECK(cm.weights.alpha == 1.0);
    CHECK(cm.weights.beta == 0.05);
    CHECK(cm.weights.gamma == 0.1);
    CHECK(cm.schedule.epochs == 100);
    CHECK(cm.schedule.iterations == 750);
    CHECK(cm.schedule.batch_size == 64);
    CHECK(cm.schedule.lr_milestones == std::vector<int>{30, 60, 90});
    CHECK(cm.generator.upsampling == arch::UpsampleMode::TransposedConvK4);
    CHECK(cm.generator.output_block == arch::OutputBlock::TanhThenBn);

    ExperimentConfig cd = default_config("desk");
    CHECK(cd.dataset.classes == 10);
    CHECK(cd.dataset.synthetic_per_class == 500);
    CHECK(cd.teachers.arch == "smallcnn8");
    CHECK(cd.student.backbone == "tiny16");
    CHECK(cd.student.feature_projection_dim == 32);

    CHECK_THROWS_WITH_AS(default_config("imagenet"), doctest::Contains("unknown profile"),
                         std::runtime_error);
}

TEST_CASE("pipeline: a minimal config inherits the whole profile") {
    ExperimentConfig c = config_from_json_text(R"({"dataset": {"name": "cifar100"}})", "inline");
    CHECK(c.weights.alpha == 5.0);
    CHECK(c.weights.beta == 0.2);
    CHECK(c.weights.gamma == 0.1);
    CHECK(c.schedule.lr_milestones == std::vector<int>{100, 200});
    CHECK(c.canonical_json() == default_config("cifar100").canonical_json());

    // A single override touches only its field and moves the hash.
    ExperimentConfig o = config_from_json_text(
        R"({"dataset": {"name": "cifar100"}, "schedule": {"batch_size": 64}})", "inline");
    CHECK(o.schedule.batch_size == 64);
    CHECK(o.schedule.epochs == 300);
    CHECK(o.weights.alpha == 5.0);
    CHECK(o.config_hash() != c.config_hash());
}

TEST_CASE("pipeline: the student and generator mirror the dataset") {
    ExperimentConfig c = config_from_json_text(
        R"({"dataset": {"name": "desk", "classes": 7, "input_h": 64, "input_w": 64}})", "inline");
    CHECK(c.student.num_classes == 7);
    CHECK(c.generator.out_h == 64);
    CHECK(c.generator.out_w == 64);
    CHECK(c.generator.out_c == 3);
}

TEST_CASE("pipeline: config errors name the offending path") {
    auto parse = [](const std::string& text) { return config_from_json_text(text, "inline"); };

    CHECK_THROWS_WITH_AS(parse(""), doctest::Contains("dataset.name"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse("  \n\t"), doctest::Contains("is empty"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse("[1, 2]"), doctest::Contains("expected an object"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse("{nope"), doctest::Contains("inline"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse("{}"), doctest::Contains("dataset"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {}})"), doctest::Contains("dataset.name"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "moon"}})"), doctest::Contains("unknown profile"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": 3})"), doctest::Contains("dataset: expected an object"),
                         std::runtime_error);

    // Unknown keys, top level and nested.
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk"}, "shedule": {}})"),
                         doctest::Contains("shedule: unknown key"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk", "rot": "x"}})"),
                         doctest::Contains("dataset.rot: unknown key"), std::runtime_error);

    // Type mismatches carry the path and both types.
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk"}, "schedule": {"epochs": "ten"}})"),
                         doctest::Contains("schedule.epochs: expected an integer, got string"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk"}, "schedule": {"eta_s": "fast"}})"),
                         doctest::Contains("schedule.eta_s: expected a number"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk"}, "seed": -3})"),
                         doctest::Contains("non-negative"), std::runtime_error);
    CHECK_THROWS_WITH_AS(
        parse(R"({"dataset": {"name": "desk"}, "schedule": {"lr_milestones": [1, "two"]}})"),
        doctest::Contains("schedule.lr_milestones[1]"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk"}, "generator": {"upsampling": "bicubic"}})"),
                         doctest::Contains("generator.upsampling"), std::runtime_error);

    // Validation after overlay.
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk"}, "teachers": {"count": 0}})"),
                         doctest::Contains("at least one teacher"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk"}, "teachers": {"seeds": [1, 2]}})"),
                         doctest::Contains("one seed per teacher"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk"}, "attention": {"subset_fraction": 1.5}})"),
                         doctest::Contains("subset_fraction"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk"}, "attention": {"val_fraction": 1.0}})"),
                         doctest::Contains("val_fraction"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk"}, "teachers": {"epochs": 3}})"),
                         doctest::Contains("teachers.lr_milestones"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk"}, "teachers": {"arch": "vgg11"}})"),
                         doctest::Contains("teachers.arch"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse(R"({"dataset": {"name": "desk", "input_h": 30}})"),
                         doctest::Contains("divisible by 4"), std::runtime_error);
}

TEST_CASE("pipeline: canonical form is stable and the hash ignores the output dir") {
    ExperimentConfig a = config_from_json_text(R"({"dataset": {"name": "desk"}})", "inline");
    ExperimentConfig b = config_from_json_text(R"({"dataset": {"name": "desk"}})", "inline");
    CHECK(a.canonical_json() == b.canonical_json());
    CHECK(a.config_hash() == b.config_hash());

    b.output_dir = "/elsewhere/run";
    CHECK(a.canonical_json() != b.canonical_json());
    CHECK(a.config_hash() == b.config_hash());

    b.seed = 99;
    CHECK(a.config_hash() != b.config_hash());
}

TEST_CASE("pipeline: load_config reads a file and reports a missing one") {
    std::string dir = fresh_dir("pipeline_loadcfg");
    std::string path = dir + "/exp.json";
    {
        std::ofstream os(path);
        os << R"({"dataset": {"name": "desk"}, "seed": 42})";
    }
    ExperimentConfig c = load_config(path);
    CHECK(c.seed == 42);
    CHECK(c.dataset.name == "desk");
    CHECK_THROWS_WITH_AS(load_config(dir + "/absent.json"), doctest::Contains("cannot open"),
                         std::runtime_error);
}

TEST_CASE("pipeline: command names round trip and reject strangers") {
    CHECK(command_from_string("pretrain") == Command::Pretrain);
    CHECK(command_from_string("distill") == Command::Distill);
    CHECK(command_from_string("attention") == Command::Attention);
    CHECK(command_from_string("eval") == Command::Eval);
    CHECK(command_from_string("export-samples") == Command::ExportSamples);
    CHECK(command_from_string("count") == Command::Count);
    CHECK(command_from_string("confusion") == Command::Confusion);
    CHECK(command_from_string("gradcam") == Command::Gradcam);
    CHECK_THROWS_WITH_AS(command_from_string("train"), doctest::Contains("export-samples"),
                         std::runtime_error);
}

TEST_CASE("pipeline: desk ingestion splits every class deterministically") {
    ExperimentConfig cfg = config_from_json_text(
        R"({"dataset": {"name": "desk", "classes": 3, "synthetic_per_class": 10,
                        "input_h": 16, "input_w": 16, "split_seed": 2}})",
        "inline");
    Splits a = ingest(cfg);
    CHECK(a.train.count() == 24);
    CHECK(a.test.count() == 6);
    CHECK(a.train.classes() == 3);
    for (int k = 0; k < 3; ++k) {
        int n = 0;
        for (int lbl : a.train.labels)
            if (lbl == k) ++n;
        CHECK(n == 8);
    }
    Splits b = ingest(cfg);
    CHECK(a.train.images.size(0) == b.train.images.size(0));
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.test.labels == b.test.labels);
    CHECK(a.train.images.at(0, 0, 0, 0) == b.train.images.at(0, 0, 0, 0));

    // Non-desk profiles must point at real images.
    ExperimentConfig cc = config_from_json_text(R"({"dataset": {"name": "cifar100"}})", "inline");
    CHECK_THROWS_WITH_AS(ingest(cc), doctest::Contains("dataset.root"), std::runtime_error);
}

TEST_CASE("pipeline: ingestion from an image tree checks the class count") {
    std::string root = fresh_dir("pipeline_tree");
    data::Dataset d = data::make_synthetic(3, 6, 16, 16, 9);
    data::write_image_tree(d, root);

    ExperimentConfig cfg = config_from_json_text(
        R"({"dataset": {"name": "desk", "classes": 3, "input_h": 16, "input_w": 16}})", "inline");
    cfg.dataset.root = root;
    Splits s = ingest(cfg);
    CHECK(s.train.count() + s.test.count() == 18);
    CHECK(s.train.class_names == d.class_names);

    cfg.dataset.classes = 5;
    cfg.student.num_classes = 5;
    CHECK_THROWS_WITH_AS(ingest(cfg), doctest::Contains("3 classes"), std::runtime_error);
}

TEST_CASE("pipeline: relative output dirs land under the environment root") {
    std::string base = fresh_dir("pipeline_envroot");
    REQUIRE(setenv("DFKD_OUTPUT_ROOT", base.c_str(), 1) == 0);
    ExperimentConfig cfg = config_from_json_text(R"({"dataset": {"name": "desk"}})", "inline");
    cfg.output_dir = "rel/run";
    run_command(cfg, Command::Count);
    unsetenv("DFKD_OUTPUT_ROOT");
    CHECK(fs::exists(fs::path(base) / "rel/run/count/summary.json"));
    CHECK(fs::exists(fs::path(base) / "rel/run/config.json"));
}

TEST_CASE("pipeline: desk-scale end to end") {
    std::string out = fresh_dir("pipeline_e2e") + "/main";
    ExperimentConfig cfg = mini_config(out);

    // Stages refuse to run before their inputs exist, and say what to do.
    CHECK_THROWS_WITH_AS(run_command(cfg, Command::Distill),
                         doctest::Contains("run the pretrain command first"), std::runtime_error);

    std::string psum = run_command(cfg, Command::Pretrain);
    CHECK(psum.find("2 x smallcnn4") != std::string::npos);
    CHECK(fs::exists(fs::path(out) / "teachers/teacher_0.bin"));
    CHECK(fs::exists(fs::path(out) / "teachers/teacher_1.bin"));
    json man = read_json(out + "/teachers/manifest.json");
    CHECK(man["config_hash"] == cfg.config_hash());
    CHECK(man["teachers"].size() == 2);
    // Default seeds derive from the run seed; distinct seeds, distinct nets.
    CHECK(man["teachers"][0]["seed"] == 112);
    CHECK(man["teachers"][1]["seed"] == 113);
    CHECK(man["teachers"][0]["state_hash"] != man["teachers"][1]["state_hash"]);
    double acc0 = man["teachers"][0]["test_accuracy_percent"];
    CHECK(acc0 >= 0.0);
    CHECK(acc0 <= 100.0);
    CHECK(man["warnings"].empty());
    json snap = read_json(out + "/config.json");
    CHECK(snap["config_hash"] == cfg.config_hash());
    CHECK(snap["schedule"]["batch_size"] == 8);

    CHECK_THROWS_WITH_AS(run_command(cfg, Command::Attention),
                         doctest::Contains("run the distill command first"), std::runtime_error);
    CHECK_THROWS_WITH_AS(run_command(cfg, Command::Eval),
                         doctest::Contains("run the distill command first"), std::runtime_error);

    std::string dsum = run_command(cfg, Command::Distill);
    CHECK(dsum.find("2 epoch(s)") != std::string::npos);
    CHECK(fs::exists(fs::path(out) / "distill/checkpoints/epoch_0000/manifest.json"));
    CHECK(fs::exists(fs::path(out) / "distill/checkpoints/epoch_0001/manifest.json"));
    CHECK(fs::exists(fs::path(out) / "distill/final/student.bin"));
    json run = read_json(out + "/distill/run.json");
    CHECK(run["epochs_completed"] == 2);
    CHECK(run["iterations_completed"] == 6);
    CHECK(run["config_hash"] == cfg.config_hash());
    {
        std::ifstream is(out + "/distill/metrics.jsonl");
        std::string line;
        std::vector<json> recs;
        while (std::getline(is, line))
            if (!line.empty()) recs.push_back(json::parse(line));
        REQUIRE(recs.size() == 6);
        CHECK(recs.front()["epoch"] == 0);
        CHECK(recs.front()["iter"] == 0);
        CHECK(recs.back()["epoch"] == 1);
        CHECK(recs.back()["iter"] == 2);
        // The epoch-start milestone cut both learning rates tenfold.
        CHECK(recs.back()["lr_s"].get<double>() == doctest::Approx(0.01));
        CHECK(recs.back()["lr_g"].get<double>() == doctest::Approx(0.0001));
    }

    // Evaluation works without a tuned query and simply skips that column.
    std::string esum = run_command(cfg, Command::Eval);
    CHECK(esum.find("student ensemble") != std::string::npos);
    json rep1 = read_json(out + "/eval/report.json");
    CHECK(rep1["test_samples"] == 32);
    CHECK(!rep1.contains("attention_acc"));
    CHECK(rep1["per_header_acc"].size() == 2);
    CHECK(rep1["teacher_accs"].size() == 2);

    // Refusing an empty subset points back at the data-free default.
    {
        ExperimentConfig none = cfg;
        none.attention.subset_fraction = 0.0;
        CHECK_THROWS_WITH_AS(run_command(none, Command::Attention),
                             doctest::Contains("average aggregation"), std::runtime_error);
    }

    std::string asum = run_command(cfg, Command::Attention);
    CHECK(asum.find("kept epoch") != std::string::npos);
    CHECK(fs::exists(fs::path(out) / "attention/query.json"));
    json aman = read_json(out + "/attention/manifest.json");
    CHECK(aman["subset_samples"] == 64);
    CHECK(aman["fit_samples"] == 48);
    CHECK(aman["val_samples"] == 16);
    CHECK(aman["train_losses"].size() == 2);
    CHECK(aman["val_losses"].size() == 2);

    run_command(cfg, Command::Eval);
    json rep2 = read_json(out + "/eval/report.json");
    CHECK(rep2.contains("attention_acc"));

    // The sample grid is a pure function of the seed.
    run_command(cfg, Command::ExportSamples);
    std::string grid1 = slurp(out + "/samples/grid.ppm");
    run_command(cfg, Command::ExportSamples);
    CHECK(slurp(out + "/samples/grid.ppm") == grid1);
    data::RasterImage grid = data::read_raster(out + "/samples/grid.ppm");
    CHECK(grid.channels == 3);
    CHECK(grid.height == 32);
    CHECK(grid.width == 48);

    // The count command reports exactly what the cost walker computes.
    std::string csum = run_command(cfg, Command::Count);
    CHECK(csum.find("sharing overhead") != std::string::npos);
    json cost = read_json(out + "/count/summary.json");
    eval::ModelCost sc = eval::student_cost(cfg.student, 16, 16);
    eval::ModelCost tc = eval::classifier_cost({"smallcnn4", 4}, 16, 16);
    CHECK(cost["student"]["params"] == sc.params);
    CHECK(cost["student"]["macs"] == sc.macs);
    CHECK(cost["teacher"]["params"] == tc.params);
    CHECK(cost["teacher"]["macs"] == tc.macs);
    CHECK(read_json(out + "/count/student.json")["params"] == sc.params);

    std::string fsum = run_command(cfg, Command::Confusion);
    CHECK(fsum.find("off the diagonal") != std::string::npos);
    json conf = read_json(out + "/confusion/summary.json");
    CHECK(conf["samples_real"] == 32);
    CHECK(conf["samples_generated"] == 32);
    double off_real = conf["off_diagonal_real"];
    double off_gen = conf["off_diagonal_generated"];
    CHECK(off_real >= 0.0);
    CHECK(off_real <= 1.0);
    CHECK(off_gen >= 0.0);
    CHECK(off_gen <= 1.0);
    CHECK(slurp(out + "/confusion/real.csv").substr(0, 10) == "label,0,1,");
    CHECK(fs::exists(fs::path(out) / "confusion/generated.csv"));

    std::string gsum = run_command(cfg, Command::Gradcam);
    CHECK(gsum.find("activation maps") != std::string::npos);
    data::RasterImage probe = data::read_raster(out + "/gradcam/probe.ppm");
    CHECK(probe.channels == 3);
    CHECK(probe.width == 16);
    data::RasterImage tmap = data::read_raster(out + "/gradcam/teacher.pgm");
    CHECK(tmap.channels == 1);
    CHECK(tmap.height == 16);
    CHECK(fs::exists(fs::path(out) / "gradcam/header_0.pgm"));
    CHECK(fs::exists(fs::path(out) / "gradcam/header_1.pgm"));
    json gman = read_json(out + "/gradcam/manifest.json");
    CHECK(gman["files"].size() == 4);
    int glabel = gman["label"];
    CHECK(glabel >= 0);
    CHECK(glabel < 4);
}

TEST_CASE("pipeline: a resumed distillation matches the uninterrupted run") {
    std::string base = fresh_dir("pipeline_resume");
    std::string straight = base + "/straight";
    std::string pieces = base + "/pieces";

    // Reference: the full two-epoch run in one go.
    ExperimentConfig cfg_a = mini_config(straight);
    run_command(cfg_a, Command::Pretrain);
    run_command(cfg_a, Command::Distill);

    // Same experiment stopped after one epoch, then resumed to the end. The
    // one-epoch leg drops the milestone (it fires at epoch 1, outside a
    // one-epoch schedule) which changes nothing before that epoch.
    ExperimentConfig cfg_b = mini_config(pieces);
    run_command(cfg_b, Command::Pretrain);
    CHECK(slurp(pieces + "/teachers/teacher_0.bin") == slurp(straight + "/teachers/teacher_0.bin"));

    ExperimentConfig cfg_b1 = cfg_b;
    cfg_b1.schedule.epochs = 1;
    cfg_b1.schedule.lr_milestones.clear();
    run_command(cfg_b1, Command::Distill);
    {
        json run = read_json(pieces + "/distill/run.json");
        CHECK(run["epochs_completed"] == 1);
        CHECK(run["iterations_completed"] == 3);
    }

    RunOptions opts;
    opts.resume_checkpoint = pieces + "/distill/checkpoints/epoch_0000";
    run_command(cfg_b, Command::Distill, opts);

    json run = read_json(pieces + "/distill/run.json");
    CHECK(run["epochs_completed"] == 2);
    CHECK(run["iterations_completed"] == 6);
    CHECK(run["resumed_from"] == opts.resume_checkpoint);

    // Parameters and the metrics log are byte-for-byte the straight run's.
    CHECK(slurp(pieces + "/distill/final/student.bin") == slurp(straight + "/distill/final/student.bin"));
    CHECK(slurp(pieces + "/distill/final/generator.bin") ==
          slurp(straight + "/distill/final/generator.bin"));
    CHECK(slurp(pieces + "/distill/metrics.jsonl") == slurp(straight + "/distill/metrics.jsonl"));

    // A fresh (non-resumed) distill owns the directory again: the log is
    // rewritten, not extended.
    run_command(cfg_b, Command::Distill);
    CHECK(slurp(pieces + "/distill/metrics.jsonl") == slurp(straight + "/distill/metrics.jsonl"));

    // Resuming with a different architecture is refused outright.
    ExperimentConfig other = cfg_b;
    other.student.num_headers = 1;
    other.teachers.count = 1;
    other.teachers.seeds = {112};
    run_command(other, Command::Pretrain);
    CHECK_THROWS_WITH_AS(run_command(other, Command::Distill, opts),
                         doctest::Contains("refusing to resume"), std::runtime_error);
}
