#include <stdio.h>
#include <string.h>
#include "deepsignal.h"

#define CHECK(x) do { DsStatus s_ = (x); if (s_ != DS_OK) { char m[256]; ds_last_error(m, sizeof m); \
  fprintf(stderr, "%s -> %d: %s\n", #x, (int)s_, m); return 1; } } while (0)

int main(int argc, char **argv) {
  DsEnv *env = NULL;
  CHECK(ds_env_new("{\"encoder_size\": 24}", 7, &env));
  double total = 0.0, r = 0.0;
  uint8_t mask[DS_NUM_ACTIONS];
  for (int t = 0; t < 600; t++) {
    CHECK(ds_env_valid_actions(env, mask));
    uint32_t a = (t % 40 == 0 && mask[3]) ? 3 : 0;
    CHECK(ds_env_step(env, a, &r));
    total += r;
  }
  uint32_t q[DS_NUM_APPROACHES];
  CHECK(ds_env_queues(env, q));
  uint64_t now = 0;
  CHECK(ds_env_time(env, &now));
  size_t needed = 0;
  if (ds_env_observation(env, NULL, 0, &needed) != DS_BUFFER_TOO_SMALL || needed != 4 * 24 * 24) return 2;
  if (argc > 1) {
    DsPolicy *p = NULL;
    CHECK(ds_policy_load(argv[1], &p));
    double qv[DS_NUM_ACTIONS];
    uint32_t act = 99;
    CHECK(ds_policy_q_values(p, env, qv));
    CHECK(ds_policy_act(p, env, &act));
    if (act >= DS_NUM_ACTIONS) return 3;
    ds_policy_free(p);
  }
  if (ds_env_step(env, 42, NULL) != DS_INVALID_ARGUMENT) return 4;
  ds_env_free(env);
  printf("t=%llu reward=%.1f queues=%u,%u,%u,%u\n", (unsigned long long)now, total, q[0], q[1], q[2], q[3]);
  return 0;
}
