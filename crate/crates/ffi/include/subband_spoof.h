/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SUBBAND_SPOOF_H
#define SUBBAND_SPOOF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum SbsStatus {
  SBS_STATUS_OK = 0,
  /*
   Null pointer, bad length or otherwise invalid argument.
   */
  SBS_STATUS_INVALID_ARGUMENT = 1,
  SBS_STATUS_IO = 2,
  /*
   Unsupported or malformed audio, protocol or JSON.
   */
  SBS_STATUS_FORMAT = 3,
  /*
   Checkpoint or architecture problem.
   */
  SBS_STATUS_MODEL = 4,
  /*
   Metric undefined for the given scores (e.g. a single class).
   */
  SBS_STATUS_METRIC = 5,
  SBS_STATUS_PANIC = 6,
} SbsStatus;

/*
 Trimming applied before duration standardization.
 */
typedef enum SbsTrimMode {
  SBS_TRIM_MODE_NONE = 0,
  SBS_TRIM_MODE_ZEROS = 1,
} SbsTrimMode;

/*
 A loaded countermeasure (sub-CNN or joint model).
 */
typedef struct SbsModel SbsModel;

/*
 Normalized 300 x 257 log-power spectrogram.
 */
typedef struct SbsSpectrogram SbsSpectrogram;

/*
 t-DCF costs, priors and the ASV operating point.
 */
typedef struct SbsTdcfParams {
  double cost_miss_asv;
  double cost_fa_asv;
  double cost_miss_cm;
  double cost_fa_cm;
  double prior_target;
  double prior_nontarget;
  double prior_spoof;
  double p_miss_asv;
  double p_fa_asv;
  double p_miss_spoof_asv;
} SbsTdcfParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *sbs_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sbs_version(void);

/*
 Load a 16 kHz mono 16-bit WAV file and compute its normalized features.
 */
enum SbsStatus sbs_spectrogram_from_wav(const char *path,
                                        enum SbsTrimMode trim,
                                        struct SbsSpectrogram **out);

/*
 Frames and bins of a spectrogram.
 */
enum SbsStatus sbs_spectrogram_shape(const struct SbsSpectrogram *spec,
                                     size_t *frames,
                                     size_t *bins);

/*
 Copy the row-major (frame, bin) values into `dst`, which must hold
 exactly `frames * bins` doubles.
 */
enum SbsStatus sbs_spectrogram_copy(const struct SbsSpectrogram *spec, double *dst, size_t len);

/*
 Build a spectrogram handle from `frames * bins` row-major values.
 */
enum SbsStatus sbs_spectrogram_from_values(const double *values,
                                           size_t frames,
                                           size_t bins,
                                           struct SbsSpectrogram **out);

void sbs_spectrogram_free(struct SbsSpectrogram *spec);

/*
 Band widths of the `n`-way plan (n in 1, 2, 4, 8). `out` must have room
 for `n` entries; `capacity` is its length.
 */
enum SbsStatus sbs_subband_widths(size_t n, size_t *out, size_t capacity);

/*
 Load a checkpoint directory (manifest.json + weights.bin).
 */
enum SbsStatus sbs_model_load(const char *dir, struct SbsModel **out);

/*
 Bonafide posterior for a normalized fullband spectrogram.
 */
enum SbsStatus sbs_model_score_spectrogram(const struct SbsModel *model,
                                           const struct SbsSpectrogram *spec,
                                           double *score);

/*
 Score a WAV file with the trimming recorded in the checkpoint
 (annotation trimming falls back to none).
 */
enum SbsStatus sbs_model_score_wav(const struct SbsModel *model, const char *path, double *score);

/*
 Number of trainable parameters of a loaded model.
 */
enum SbsStatus sbs_model_param_count(const struct SbsModel *model, size_t *count);

void sbs_model_free(struct SbsModel *model);

/*
 Equal error rate (fraction in [0, 1]); labels are 1 = bonafide, 0 = spoof.
 */
enum SbsStatus sbs_compute_eer(const double *scores, const int *labels, size_t n, double *eer);

/*
 2019-convention costs and priors with the given ASV operating point.
 */
struct SbsTdcfParams sbs_tdcf_params_default(double p_miss_asv,
                                             double p_fa_asv,
                                             double p_miss_spoof_asv);

/*
 Normalized minimum t-DCF of the countermeasure scores.
 */
enum SbsStatus sbs_min_tdcf(const double *scores,
                            const int *labels,
                            size_t n,
                            const struct SbsTdcfParams *params,
                            double *tdcf);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBBAND_SPOOF_H */
