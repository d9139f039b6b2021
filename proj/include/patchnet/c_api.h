#ifndef PATCHNET_C_API_H
#define PATCHNET_C_API_H

#include <stddef.h>

#if defined(_WIN32)
#define PN_API __declspec(dllexport)
#else
#define PN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes; the CLI uses them as process exit codes. */
typedef enum pn_status {
    PN_OK = 0,
    PN_ERR_INTERNAL = 1,
    PN_ERR_CONFIG = 2,     /* invalid geometry, arguments or run configuration */
    PN_ERR_IO = 3,         /* unreadable/unwritable path, malformed image or manifest */
    PN_ERR_CHECKPOINT = 4  /* checkpoint rejected */
} pn_status;

typedef struct pn_config pn_config;
typedef struct pn_classifier pn_classifier;

/* Message of the last failure on the calling thread ("" if none). */
PN_API const char* pn_last_error(void);
PN_API const char* pn_version(void);
PN_API unsigned pn_checkpoint_format_version(void);

/* Progress lines (epoch summaries) go to this sink; NULL silences them. */
typedef void (*pn_log_fn)(const char* line, void* user);
PN_API void pn_set_log(pn_log_fn fn, void* user);

/* ---- run configuration ---------------------------------------------------- */

PN_API pn_status pn_config_new(pn_config** out);
/* Merges a JSON config file over the current values. */
PN_API pn_status pn_config_load(pn_config* cfg, const char* path);
/* Dotted key, e.g. "geometry.window", "trainer.lr", "seed"; value is a JSON
   literal or a bare string. */
PN_API pn_status pn_config_set(pn_config* cfg, const char* key, const char* value);
/* Resolved config as JSON; free with pn_string_free. */
PN_API pn_status pn_config_json(const pn_config* cfg, char** out_json);
PN_API void pn_config_free(pn_config* cfg);

PN_API void pn_string_free(char* s);

/* ---- commands ------------------------------------------------------------- */
/* Each writes a JSON report (embedding the resolved config and format
   versions) to *out_json, freed with pn_string_free. */

PN_API pn_status pn_geometry(const pn_config* cfg, char** out_json);
PN_API pn_status pn_rf(const pn_config* cfg, char** out_json);
PN_API pn_status pn_synth(const pn_config* cfg, char** out_json);
PN_API pn_status pn_stats(const pn_config* cfg, char** out_json);
PN_API pn_status pn_train_patch(const pn_config* cfg, char** out_json);
PN_API pn_status pn_train_image(const pn_config* cfg, char** out_json);
PN_API pn_status pn_infer(const pn_config* cfg, char** out_json);
PN_API pn_status pn_eval(const pn_config* cfg, char** out_json);

/* ---- classifier handle ---------------------------------------------------- */

PN_API pn_status pn_classifier_open(const char* patch_checkpoint, const char* image_checkpoint,
                                    pn_classifier** out);
/* rgb: interleaved 8-bit height x width x 3. probabilities: 4 floats. */
PN_API pn_status pn_classifier_predict(const pn_classifier* clf, const unsigned char* rgb,
                                       size_t width, size_t height, int* label,
                                       float* probabilities);
PN_API const char* pn_class_name(int label);
PN_API void pn_classifier_free(pn_classifier* clf);

#ifdef __cplusplus
}
#endif

#endif
