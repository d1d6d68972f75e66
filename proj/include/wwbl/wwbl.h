/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface to the grounding library. Objects are opaque handles; every
 * call returns a wwbl_status and, on failure, leaves a message retrievable
 * with wwbl_last_error() on the calling thread. Strings returned through
 * char** out-parameters are owned by the caller and released with
 * wwbl_string_free().
 */
#ifndef WWBL_WWBL_H
#define WWBL_WWBL_H

#include <stddef.h>
#include <stdint.h>

#if defined(WWBL_BUILDING_LIBRARY)
#define WWBL_API __attribute__((visibility("default")))
#else
#define WWBL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum wwbl_status {
  WWBL_OK = 0,
  WWBL_ERR_INTERNAL = 1,
  WWBL_ERR_CONFIG = 2, /* also invalid arguments and phrases */
  WWBL_ERR_DATA = 3,
  WWBL_ERR_NONFINITE = 4,
  WWBL_ERR_CHECKPOINT = 5,
  WWBL_ERR_DIMENSION = 6,
  WWBL_ERR_BACKEND = 7,
  WWBL_ERR_UNINITIALIZED = 8
} wwbl_status;

typedef struct wwbl_config wwbl_config;
typedef struct wwbl_session wwbl_session;

typedef struct wwbl_box {
  int32_t x, y, w, h;
} wwbl_box;

typedef struct wwbl_eval_result {
  double pointing_accuracy; /* fraction in [0,1] */
  double box_accuracy;
  int32_t total;
} wwbl_eval_result;

WWBL_API const char* wwbl_version(void);
/* Message for the last failed call on this thread ("" if none). */
WWBL_API const char* wwbl_last_error(void);
WWBL_API void wwbl_string_free(char* s);

/* Configuration ---------------------------------------------------------- */

WWBL_API wwbl_status wwbl_config_default(wwbl_config** out);
WWBL_API wwbl_status wwbl_config_load(const char* path, wwbl_config** out);
/* Overlays a JSON object, e.g. {"train": {"epochs": 3}}. */
WWBL_API wwbl_status wwbl_config_merge_json(wwbl_config* cfg, const char* json);
WWBL_API wwbl_status wwbl_config_to_json(const wwbl_config* cfg, char** out);
WWBL_API void wwbl_config_free(wwbl_config* cfg);

/* Sessions: a validated configuration, its backend and (optionally) a net. */

WWBL_API wwbl_status wwbl_session_create(const wwbl_config* cfg, wwbl_session** out);
WWBL_API void wwbl_session_free(wwbl_session* s);
/* Fresh weights from `seed`. */
WWBL_API wwbl_status wwbl_session_init_net(wwbl_session* s, uint64_t seed);
/* Weights from a checkpoint whose network matches the session's net config. */
WWBL_API wwbl_status wwbl_session_load_checkpoint(wwbl_session* s, const char* path);

/* Trains on an annotation file (only its images and captions are read) and
 * writes per-epoch checkpoints under train.runs_dir/train.name. Initialises
 * the net from train.seed if the session has none. `out_checkpoint`, if not
 * NULL, receives the last checkpoint path. */
WWBL_API wwbl_status wwbl_train(wwbl_session* s, const char* annotations, char** out_checkpoint);

/* Inference. `mode` is one of "wsol", "wsg", "wwbl", "wwbl-iter".
 * Images come either from `annotations` (ids are the records' image fields;
 * wsg without prompts then queries each record's region phrases) or from
 * `images` (ids are the paths as given). `prompts` apply to every image.
 * `overlay_dir` and `mask_dir` may be NULL. `workers` >= 1. */
WWBL_API wwbl_status wwbl_infer(wwbl_session* s, const char* mode, const char* annotations,
                                const char* const* images, size_t image_count, const char* const* prompts,
                                size_t prompt_count, const char* out_records, const char* overlay_dir,
                                const char* mask_dir, int workers);

/* Scores a prediction file against an annotation file. `task` is "wsol",
 * "wsg" or "wwbl". `report_path` may be NULL. */
WWBL_API wwbl_status wwbl_eval(wwbl_session* s, const char* predictions, const char* annotations, const char* task,
                               const char* report_path, wwbl_eval_result* out);

/* Writes `count` colour-blob scenes plus annotations.jsonl under `out_dir`. */
WWBL_API wwbl_status wwbl_make_synthetic(const wwbl_config* cfg, const char* out_dir, int count, uint64_t seed);

/* Geometry helpers --------------------------------------------------------- */

WWBL_API double wwbl_iou(wwbl_box a, wwbl_box b);
/* Writes surviving indices (keep order) to `keep`, which must hold `n`
 * entries; `kept` receives their count. */
WWBL_API wwbl_status wwbl_nms(const wwbl_box* boxes, const double* scores, size_t n, double iou_threshold,
                              size_t* keep, size_t* kept);

#ifdef __cplusplus
}
#endif

#endif /* WWBL_WWBL_H */
