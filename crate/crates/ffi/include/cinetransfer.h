#ifndef CINETRANSFER_H
#define CINETRANSFER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtStatus {
  CT_STATUS_OK = 0,
  CT_STATUS_NULL_POINTER = 1,
  CT_STATUS_INVALID_ARGUMENT = 2,
  CT_STATUS_OUT_OF_RANGE = 3,
  CT_STATUS_IO = 4,
  CT_STATUS_PARSE = 5,
  CT_STATUS_NUMERICAL = 6,
  CT_STATUS_OUT_OF_BOUNDS = 7,
  CT_STATUS_OPTIMIZATION = 8,
  CT_STATUS_BUFFER_TOO_SMALL = 9,
  CT_STATUS_PANIC = 10,
} CtStatus;

/**
 * Opaque renderer handle.
 */
typedef struct CtRenderer CtRenderer;

/**
 * Opaque scenario handle.
 */
typedef struct CtScenario CtScenario;

/**
 * Opaque scene handle.
 */
typedef struct CtScene CtScene;

/**
 * Opaque keyframe trajectory handle.
 */
typedef struct CtTrajectory CtTrajectory;

/**
 * A camera: row-major world-from-camera rotation, camera centre, focal
 * length in pixels and normalized scene time.
 */
typedef struct CtCamera {
  double rotation[9];
  double translation[3];
  double focal;
  double time;
} CtCamera;

/**
 * Summary of one copy-task run. Metrics that do not apply or were not
 * computed are NaN.
 */
typedef struct CtReport {
  bool success;
  double rmse_ate;
  double pixel_error;
  double joint_error;
  size_t iterations;
  size_t peak_active_pixels;
} CtReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 */
size_t ct_last_error(char *buf, size_t len);

/**
 * NUL-terminated library version.
 */
const char *ct_version(void);

/**
 * Camera at `eye` looking at `target` with world +y up.
 */
enum CtStatus ct_camera_look_at(const double *eye,
                                const double *target,
                                double focal,
                                double time,
                                struct CtCamera *out);

/**
 * Built-in scene by name (`scene_a`, `scene_b`).
 */
enum CtStatus ct_scene_preset(const char *name, struct CtScene **out);

/**
 * Scene from a TOML file.
 */
enum CtStatus ct_scene_load(const char *path, struct CtScene **out);

void ct_scene_free(struct CtScene *scene);

enum CtStatus ct_scene_diameter(const struct CtScene *scene, double *out);

enum CtStatus ct_scene_joint_count(const struct CtScene *scene, size_t *out);

/**
 * Renderer over `scene` (which stays owned by the caller) with
 * `n_samples` quadrature samples per ray.
 */
enum CtStatus ct_renderer_new(const struct CtScene *scene,
                              size_t height,
                              size_t width,
                              size_t n_samples,
                              struct CtRenderer **out);

void ct_renderer_free(struct CtRenderer *renderer);

/**
 * Renders `camera` into `rgb`, `height * width * 3` doubles in row-major
 * `[row][col][channel]` order.
 */
enum CtStatus ct_render(const struct CtRenderer *renderer,
                        const struct CtCamera *camera,
                        double *rgb,
                        size_t len);

/**
 * Trajectory from an export file.
 */
enum CtStatus ct_trajectory_load(const char *path, struct CtTrajectory **out);

/**
 * Trajectory from `n` cameras numbered `0..n`.
 */
enum CtStatus ct_trajectory_from_cameras(const struct CtCamera *cameras,
                                         size_t n,
                                         struct CtTrajectory **out);

enum CtStatus ct_trajectory_save(const struct CtTrajectory *traj, const char *path);

void ct_trajectory_free(struct CtTrajectory *traj);

enum CtStatus ct_trajectory_len(const struct CtTrajectory *traj, size_t *out);

enum CtStatus ct_trajectory_get(const struct CtTrajectory *traj,
                                size_t index,
                                struct CtCamera *out);

/**
 * Root-mean-square camera-centre distance between two trajectories.
 */
enum CtStatus ct_rmse_ate(const struct CtTrajectory *est,
                          const struct CtTrajectory *gt,
                          double *out);

enum CtStatus ct_scenario_load(const char *path, struct CtScenario **out);

/**
 * Scenario from TOML text.
 */
enum CtStatus ct_scenario_parse(const char *text, struct CtScenario **out);

void ct_scenario_free(struct CtScenario *scenario);

/**
 * Overrides the scenario's seed and per-window iteration budget.
 */
enum CtStatus ct_scenario_configure(struct CtScenario *scenario,
                                    uint64_t seed,
                                    size_t iters_per_window);

/**
 * Runs the scenario's copy task. `out_dir` may be null to skip writing
 * files. A failed optimization still returns `Ok` with `success = false`.
 */
enum CtStatus ct_copy_task(const struct CtScenario *scenario,
                           const char *out_dir,
                           struct CtReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CINETRANSFER_H */
