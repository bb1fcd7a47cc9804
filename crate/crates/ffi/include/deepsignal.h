/* C interface to the deepsignal environment and trained policies. */

#ifndef DEEPSIGNAL_H
#define DEEPSIGNAL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define DS_NUM_ACTIONS 5
#define DS_NUM_APPROACHES 4

typedef enum DsStatus {
  DS_OK = 0,
  DS_NULL_POINTER = 1,
  DS_INVALID_ARGUMENT = 2,
  DS_CONFIG = 3,
  DS_RULE_VIOLATION = 4,
  DS_IO = 5,
  DS_SHAPE_MISMATCH = 6,
  DS_BUFFER_TOO_SMALL = 7,
  DS_PANIC = 8,
  DS_INTERNAL = 9,
} DsStatus;

/* Actions: 0 do nothing, 1 advance ring 1, 2 advance ring 2,
 * 3 advance both rings, 4 advance to barrier. */

typedef struct DsEnv DsEnv;
typedef struct DsPolicy DsPolicy;

/* Copies the last error on this thread; returns its full length. */
size_t ds_last_error(char *buf, size_t len);

/* config_json may be NULL for defaults. */
DsStatus ds_env_new(const char *config_json, uint64_t seed, DsEnv **out);
void ds_env_free(DsEnv *env);
DsStatus ds_env_step(DsEnv *env, uint32_t action, double *reward_out);
DsStatus ds_env_valid_actions(const DsEnv *env, uint8_t *mask_out);
DsStatus ds_env_queues(const DsEnv *env, uint32_t *queues_out);
DsStatus ds_env_time(const DsEnv *env, uint64_t *t_out);
/* 4 frames of size*size bytes, each 0 or 1. */
DsStatus ds_env_observation(const DsEnv *env, uint8_t *buf, size_t len, size_t *needed_out);

DsStatus ds_policy_load(const char *path, DsPolicy **out);
void ds_policy_free(DsPolicy *policy);
DsStatus ds_policy_q_values(const DsPolicy *policy, const DsEnv *env, double *q_out);
DsStatus ds_policy_act(const DsPolicy *policy, const DsEnv *env, uint32_t *action_out);

#ifdef __cplusplus
}
#endif

#endif
