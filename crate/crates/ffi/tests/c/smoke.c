#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "distdyn.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    DdStatus st_ = (call);                                                 \
    if (st_ != DD_STATUS_OK) {                                             \
      fprintf(stderr, "%s failed (%d): %s\n", #call, st_, dd_last_error()); \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  enum { N = 200 };
  double x[N], y[N];
  unsigned long long s = 88172645463325252ULL;
  for (int i = 0; i < N; i++) {
    s ^= s << 13; s ^= s >> 7; s ^= s << 17;
    x[i] = ((double)(s % 10000) / 10000.0 - 0.5) * 0.6;
    s ^= s << 13; s ^= s >> 7; s ^= s << 17;
    y[i] = 0.5 * x[i] + ((double)(s % 10000) / 10000.0 - 0.5) * 0.3;
  }

  DdSample *sample = NULL;
  CHECK(dd_sample_from_arrays(x, y, NULL, N, 1, &sample));
  if (dd_sample_len(sample) != N) return 1;

  DdEstimation est = {-0.8, 0.8, 30, 0.5, 1e-8};
  DdKernel *kernel = NULL;
  CHECK(dd_kernel_estimate(sample, &est, &kernel));

  DdDensity *density = NULL;
  CHECK(dd_ergodic(kernel, 0.0, 0, &density));
  size_t m = dd_density_len(density);
  double *values = malloc(m * sizeof *values);
  CHECK(dd_density_values(density, values, m));
  double h = 1.6 / (double)(m - 1), mass = 0.0;
  for (size_t i = 0; i < m; i++) mass += values[i] * ((i == 0 || i == m - 1) ? 0.5 : 1.0) * h;
  if (fabs(mass - 1.0) > 1e-9) {
    fprintf(stderr, "mass %g\n", mass);
    return 1;
  }

  double d = -1.0;
  CHECK(dd_divergence(kernel, kernel, NULL, DD_METRIC_HELLINGER, 1e-8, &d));
  if (d != 0.0) return 1;

  if (dd_kernel_estimate(NULL, &est, &kernel) != DD_STATUS_NULL_POINTER) return 1;
  if (strstr(dd_last_error(), "null") == NULL) return 1;

  printf("ok %s\n", dd_version());
  free(values);
  dd_density_free(density);
  dd_kernel_free(kernel);
  dd_sample_free(sample);
  return 0;
}
