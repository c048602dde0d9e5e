#include <atomic>
#include <cstdlib>
#include <string_view>

#include "fpf/kernels.hpp"

namespace fpf::kernels {

#ifdef FPF_HAVE_AVX2_TU
const KernelTable& avx2_table_unchecked();
#endif

const KernelTable* avx2_table() {
#ifdef FPF_HAVE_AVX2_TU
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  if (supported) return &avx2_table_unchecked();
#endif
  return nullptr;
}

namespace {

const KernelTable* detect() {
  const char* env = std::getenv("FPFLAB_KERNELS");
  const std::string_view choice = env ? env : "auto";
  if (choice == "scalar") return &scalar_table();
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{detect()};
  return current;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

bool select(Backend backend) {
  const KernelTable* t = backend == Backend::scalar ? &scalar_table() : avx2_table();
  if (t == nullptr) return false;
  slot().store(t, std::memory_order_release);
  return true;
}

}  // namespace fpf::kernels
