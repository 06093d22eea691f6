#ifndef DFKD_H
#define DFKD_H

/* C interface to the distillation pipeline. A session wraps one experiment
 * config; each call runs one pipeline stage against its artifact directory.
 * All functions are synchronous and a session must not be shared across
 * threads without external locking. */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct dfkd_session dfkd_session;

typedef enum dfkd_status {
    DFKD_OK = 0,
    DFKD_INVALID_ARGUMENT = 1, /* bad handle, bad command, or no valid config */
    DFKD_RUNTIME_ERROR = 2     /* a stage started and failed; see last_error */
} dfkd_status;

/* Parses the JSON experiment config at config_path. The session is returned
 * even when parsing fails, so the parse error can be read through
 * dfkd_last_error; run calls refuse until a session holds a valid config.
 * Returns NULL only when allocation fails. Free with dfkd_close. */
dfkd_session* dfkd_open(const char* config_path);
void dfkd_close(dfkd_session* session);

/* Overrides applied on top of the loaded config. */
dfkd_status dfkd_set_seed(dfkd_session* session, uint64_t seed);
dfkd_status dfkd_set_output_dir(dfkd_session* session, const char* dir);
/* Checkpoint directory the next distill run continues from; an empty string
 * or NULL clears it. */
dfkd_status dfkd_set_resume(dfkd_session* session, const char* checkpoint_dir);

/* Runs one stage: pretrain, distill, attention, eval, export-samples, count,
 * confusion, or gradcam. On success dfkd_last_summary describes the result;
 * on failure dfkd_last_error says what went wrong. */
dfkd_status dfkd_run(dfkd_session* session, const char* command);

/* Both strings are owned by the session, never NULL, and stay valid until
 * the next call on the same session. */
const char* dfkd_last_error(const dfkd_session* session);
const char* dfkd_last_summary(const dfkd_session* session);

const char* dfkd_version(void);

#ifdef __cplusplus
}
#endif

#endif /* DFKD_H */
