#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "dfkd.h"

namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "dfkd_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string write_config(const std::string& dir, const std::string& out_dir) {
    std::string path = dir + "/exp.json";
    std::ofstream os(path);
    os << R"({"dataset": {"name": "desk", "classes": 3, "input_h": 16, "input_w": 16,
                          "synthetic_per_class": 5},
              "teachers": {"arch": "smallcnn4", "count": 1, "epochs": 0,
                           "lr_milestones": [], "accuracy_floor": 0.0},
              "student": {"backbone": "tiny8", "headers": 1, "feature_projection_dim": 16},
              "output_dir": ")"
       << out_dir << R"("})";
    return path;
}

} // namespace

TEST_CASE("capi: a bad config path yields a readable session, not a crash") {
    dfkd_session* s = dfkd_open("/does/not/exist.json");
    REQUIRE(s != nullptr);
    CHECK(std::strstr(dfkd_last_error(s), "cannot open") != nullptr);
    // No valid config loaded: run refuses with the same diagnostic available.
    CHECK(dfkd_run(s, "count") == DFKD_INVALID_ARGUMENT);
    dfkd_close(s);
}

TEST_CASE("capi: null handles and null arguments are inert") {
    CHECK(dfkd_last_error(nullptr)[0] == '\0');
    CHECK(dfkd_last_summary(nullptr)[0] == '\0');
    CHECK(dfkd_set_seed(nullptr, 1) == DFKD_INVALID_ARGUMENT);
    CHECK(dfkd_set_output_dir(nullptr, "x") == DFKD_INVALID_ARGUMENT);
    CHECK(dfkd_run(nullptr, "count") == DFKD_INVALID_ARGUMENT);
    dfkd_close(nullptr);

    dfkd_session* s = dfkd_open(nullptr);
    REQUIRE(s != nullptr);
    CHECK(dfkd_last_error(s)[0] != '\0');
    dfkd_close(s);

    CHECK(dfkd_version()[0] != '\0');
}

TEST_CASE("capi: a session runs stages and reports results") {
    std::string dir = fresh_dir("capi_run");
    std::string cfg = write_config(dir, dir + "/out");

    dfkd_session* s = dfkd_open(cfg.c_str());
    REQUIRE(s != nullptr);
    CHECK(dfkd_last_error(s)[0] == '\0');

    CHECK(dfkd_run(s, nullptr) == DFKD_INVALID_ARGUMENT);
    CHECK(dfkd_run(s, "bogus") == DFKD_INVALID_ARGUMENT);
    CHECK(std::strstr(dfkd_last_error(s), "export-samples") != nullptr);

    CHECK(dfkd_run(s, "count") == DFKD_OK);
    CHECK(std::strstr(dfkd_last_summary(s), "params") != nullptr);
    CHECK(dfkd_last_error(s)[0] == '\0');
    CHECK(fs::exists(fs::path(dir) / "out/count/summary.json"));

    // A stage that starts and then hits a missing prerequisite is a runtime
    // failure, and the message names the fix.
    CHECK(dfkd_run(s, "eval") == DFKD_RUNTIME_ERROR);
    CHECK(std::strstr(dfkd_last_error(s), "pretrain") != nullptr);
    CHECK(dfkd_last_summary(s)[0] == '\0');

    dfkd_close(s);
}

TEST_CASE("capi: overrides redirect the output and move the config hash") {
    std::string dir = fresh_dir("capi_override");
    std::string cfg = write_config(dir, dir + "/out");

    dfkd_session* s = dfkd_open(cfg.c_str());
    REQUIRE(s != nullptr);
    CHECK(dfkd_set_output_dir(s, "") == DFKD_INVALID_ARGUMENT);
    CHECK(dfkd_set_output_dir(s, (dir + "/other").c_str()) == DFKD_OK);
    CHECK(dfkd_run(s, "count") == DFKD_OK);
    CHECK(fs::exists(fs::path(dir) / "other/count/summary.json"));
    CHECK(!fs::exists(fs::path(dir) / "out/count"));

    // Reseeding changes the recorded config hash on the next artifact.
    std::string before;
    {
        std::ifstream is(dir + "/other/config.json");
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        before = text;
    }
    CHECK(dfkd_set_seed(s, 777) == DFKD_OK);
    CHECK(dfkd_run(s, "count") == DFKD_OK);
    {
        std::ifstream is(dir + "/other/config.json");
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        CHECK(text != before);
    }
    dfkd_close(s);
}
