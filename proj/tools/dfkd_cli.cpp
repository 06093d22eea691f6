// Command-line front end. Everything goes through the public C interface;
// the pipeline internals stay behind the shared library boundary.

#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "dfkd.h"

int main(int argc, char** argv) {
    CLI::App app{"Data-free multi-teacher distillation pipeline"};
    app.footer("Stages build on each other: pretrain -> distill -> attention -> eval.\n"
               "export-samples, confusion, and gradcam need a distilled run; count is static.");

    std::string command, config_path, out_dir, resume;
    uint64_t seed = 0;
    app.add_option("command", command,
                   "pipeline stage: pretrain, distill, attention, eval, export-samples, "
                   "count, confusion, gradcam")
        ->required();
    app.add_option("--config", config_path, "experiment config (JSON)")->required();
    CLI::Option* seed_opt = app.add_option("--seed", seed, "override the run seed");
    app.add_option("--out", out_dir, "override the output directory");
    app.add_option("--resume", resume, "checkpoint directory to continue distillation from");
    CLI11_PARSE(app, argc, argv);

    dfkd_session* session = dfkd_open(config_path.c_str());
    if (!session) {
        std::fprintf(stderr, "error: out of memory\n");
        return 1;
    }
    int rc = 0;
    if (*dfkd_last_error(session)) {
        std::fprintf(stderr, "error: %s\n", dfkd_last_error(session));
        rc = 1;
    } else {
        if (seed_opt->count() > 0) dfkd_set_seed(session, seed);
        if (!out_dir.empty()) dfkd_set_output_dir(session, out_dir.c_str());
        if (!resume.empty()) dfkd_set_resume(session, resume.c_str());
        if (dfkd_run(session, command.c_str()) == DFKD_OK) {
            std::printf("%s\n", dfkd_last_summary(session));
        } else {
            std::fprintf(stderr, "error: %s\n", dfkd_last_error(session));
            rc = 1;
        }
    }
    dfkd_close(session);
    return rc;
}
