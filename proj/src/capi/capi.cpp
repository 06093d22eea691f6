#include "dfkd.h"

#include <exception>
#include <new>
#include <string>

#include "pipeline/pipeline.hpp"

// The handle the C side sees: the parsed config plus the latest error and
// summary text. config_ok gates every run call.
struct dfkd_session {
    dfkd::pipeline::ExperimentConfig config;
    bool config_ok = false;
    std::string error;
    std::string summary;
    std::string resume;
};

extern "C" {

dfkd_session* dfkd_open(const char* config_path) {
    dfkd_session* s = new (std::nothrow) dfkd_session();
    if (!s) return nullptr;
    if (!config_path) {
        s->error = "config_path is null";
        return s;
    }
    try {
        s->config = dfkd::pipeline::load_config(config_path);
        s->config_ok = true;
    } catch (const std::exception& e) {
        s->error = e.what();
    }
    return s;
}

void dfkd_close(dfkd_session* session) { delete session; }

dfkd_status dfkd_set_seed(dfkd_session* session, uint64_t seed) {
    if (!session) return DFKD_INVALID_ARGUMENT;
    session->config.seed = seed;
    return DFKD_OK;
}

dfkd_status dfkd_set_output_dir(dfkd_session* session, const char* dir) {
    if (!session) return DFKD_INVALID_ARGUMENT;
    if (!dir || !*dir) {
        session->error = "output directory is empty";
        return DFKD_INVALID_ARGUMENT;
    }
    session->config.output_dir = dir;
    return DFKD_OK;
}

dfkd_status dfkd_set_resume(dfkd_session* session, const char* checkpoint_dir) {
    if (!session) return DFKD_INVALID_ARGUMENT;
    session->resume = checkpoint_dir ? checkpoint_dir : "";
    return DFKD_OK;
}

dfkd_status dfkd_run(dfkd_session* session, const char* command) {
    if (!session) return DFKD_INVALID_ARGUMENT;
    session->summary.clear();
    if (!command) {
        session->error = "command is null";
        return DFKD_INVALID_ARGUMENT;
    }
    if (!session->config_ok) {
        if (session->error.empty()) session->error = "no valid config is loaded";
        return DFKD_INVALID_ARGUMENT;
    }
    dfkd::pipeline::Command cmd;
    try {
        cmd = dfkd::pipeline::command_from_string(command);
    } catch (const std::exception& e) {
        session->error = e.what();
        return DFKD_INVALID_ARGUMENT;
    }
    try {
        dfkd::pipeline::RunOptions opts;
        opts.resume_checkpoint = session->resume;
        session->summary = dfkd::pipeline::run_command(session->config, cmd, opts);
        session->error.clear();
        return DFKD_OK;
    } catch (const std::exception& e) {
        session->error = e.what();
        return DFKD_RUNTIME_ERROR;
    }
}

const char* dfkd_last_error(const dfkd_session* session) {
    return session ? session->error.c_str() : "";
}

const char* dfkd_last_summary(const dfkd_session* session) {
    return session ? session->summary.c_str() : "";
}

const char* dfkd_version(void) { return "0.1.0"; }

} // extern "C"
