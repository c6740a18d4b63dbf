#pragma once

// Explicit instantiation list shared by both kernel sets; expand inside the
// implementing namespace.

#define FFN_INSTANTIATE(T)                                                                     \
  template void conv2d_forward<T>(const FeatureMap<T>&, std::span<const T>, const ConvGeometry&, \
                                  FeatureMap<T>&);                                             \
  template void conv2d_backward<T>(const FeatureMap<T>&, std::span<const T>,                   \
                                   const ConvGeometry&, const FeatureMap<T>&, std::span<T>,    \
                                   FeatureMap<T>*);                                            \
  template void depthwise_forward<T>(const FeatureMap<T>&, std::span<const T>, int,            \
                                     FeatureMap<T>&);                                          \
  template void depthwise_backward<T>(const FeatureMap<T>&, std::span<const T>, int,           \
                                      const FeatureMap<T>&, std::span<T>, FeatureMap<T>*);     \
  template void batch_norm_train<T>(const FeatureMap<T>&, std::span<const T>,                  \
                                    std::span<const T>, T, FeatureMap<T>&, BatchMoments<T>&);  \
  template void batch_norm_eval<T>(const FeatureMap<T>&, std::span<const T>,                   \
                                   std::span<const T>, std::span<const T>, std::span<const T>, \
                                   T, FeatureMap<T>&);                                         \
  template void batch_norm_backward<T>(const FeatureMap<T>&, std::span<const T>,               \
                                       std::span<const T>, std::span<const T>, T, bool,        \
                                       const FeatureMap<T>&, std::span<T>, std::span<T>,       \
                                       FeatureMap<T>&);                                        \
  template void temporal_shift<T>(const FeatureMap<T>&, int, int, bool, FeatureMap<T>&);      \
  template void relu_forward<T>(FeatureMap<T>&);                                               \
  template void relu_backward<T>(const FeatureMap<T>&, FeatureMap<T>&);                        \
  template void global_avg_pool<T>(const FeatureMap<T>&, int, Matrix<T>&);                     \
  template void global_avg_pool_backward<T>(const Matrix<T>&, int, FeatureMap<T>&);
