// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "hbscreen/kernels.hpp"
#include "hbscreen/segment.hpp"

using namespace hbscreen;
namespace k = hbscreen::kernels;

namespace {

ImageRGB8 noise_image(int side) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> d(0, 255);
  ImageRGB8 img(side, side);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(d(rng));
  return img;
}

PlaneF32 noise_plane(int side) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> d(0, 255);
  PlaneF32 p(side, side);
  for (auto& v : p.data()) v = static_cast<float>(d(rng));
  return p;
}

template <Planes3 (*F)(const ImageRGB8&, ColorSpaceId)>
void BM_ToLab(benchmark::State& st) {
  const ImageRGB8 img = noise_image(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(F(img, ColorSpaceId::CIELab));
  st.SetItemsProcessed(st.iterations() * img.pixel_count());
}

template <PlaneF32 (*F)(const PlaneF32&, const ClaheConfig&)>
void BM_Clahe(benchmark::State& st) {
  const PlaneF32 p = noise_plane(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(F(p, {8, 8, 2.0}));
  st.SetItemsProcessed(st.iterations() * p.data().size());
}

template <PlaneF32 (*F)(const PlaneF32&, int)>
void BM_BoxMean(benchmark::State& st) {
  const PlaneF32 p = noise_plane(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(F(p, 15));
  st.SetItemsProcessed(st.iterations() * p.data().size());
}

template <bool Parallel>
void BM_SlicAssign(benchmark::State& st) {
  const int side = static_cast<int>(st.range(0));
  const Planes3 lab = k::serial::convert_color(noise_image(side), ColorSpaceId::CIELab);
  const int grid = 12;
  const double spacing = static_cast<double>(side) / grid;
  std::vector<k::SlicCenter> centers;
  std::vector<k::SlicWindow> windows;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const int x = static_cast<int>((gx + 0.5) * spacing), y = static_cast<int>((gy + 0.5) * spacing);
      centers.push_back({lab[0].at(x, y), lab[1].at(x, y), lab[2].at(x, y), double(x), double(y)});
      windows.push_back(k::slic_window(centers.back(), spacing, side, side));
    }
  }
  std::vector<std::int32_t> labels(static_cast<std::size_t>(side) * side);
  std::vector<double> dist(labels.size());
  for (auto _ : st) {
    std::fill(labels.begin(), labels.end(), -1);
    if constexpr (Parallel) {
      k::omp::slic_assign(lab, centers, windows, spacing, 10.0, labels, dist);
    } else {
      k::serial::slic_assign(lab, centers, windows, spacing, 10.0, labels, dist);
    }
    benchmark::DoNotOptimize(labels.data());
  }
  st.SetItemsProcessed(st.iterations() * labels.size());
}

template <nn::Tensor3 (*F)(const nn::Tensor3&, const nn::DepthwiseKernel&, const nn::PointwiseKernel&,
                           nn::ConvGeometry)>
void BM_DwSep(benchmark::State& st) {
  const int c = 16, side = static_cast<int>(st.range(0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  nn::Tensor3 in(c, side, side);
  for (auto& v : in.data()) v = u(rng);
  nn::DepthwiseKernel dw{c, 3, std::vector<float>(c * 9), std::vector<float>(c)};
  nn::PointwiseKernel pw{c, c, std::vector<float>(c * c), std::vector<float>(c)};
  for (auto* w : {&dw.weights, &dw.bias, &pw.weights, &pw.bias}) {
    for (auto& v : *w) v = u(rng);
  }
  for (auto _ : st) benchmark::DoNotOptimize(F(in, dw, pw, {1, 2}));
  st.SetItemsProcessed(st.iterations() * in.data().size());
}

}  // namespace

BENCHMARK(BM_ToLab<k::serial::convert_color>)->Name("convert_lab/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_ToLab<k::omp::convert_color>)->Name("convert_lab/omp")->Arg(256)->Arg(1024);
BENCHMARK(BM_Clahe<k::serial::clahe>)->Name("clahe/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_Clahe<k::omp::clahe>)->Name("clahe/omp")->Arg(256)->Arg(1024);
BENCHMARK(BM_BoxMean<k::serial::box_mean>)->Name("box_mean/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_BoxMean<k::omp::box_mean>)->Name("box_mean/omp")->Arg(256)->Arg(1024);
BENCHMARK(BM_SlicAssign<false>)->Name("slic_assign/serial")->Arg(256)->Arg(768);
BENCHMARK(BM_SlicAssign<true>)->Name("slic_assign/omp")->Arg(256)->Arg(768);
BENCHMARK(BM_DwSep<k::serial::dwsep_conv2d>)->Name("dwsep_conv/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_DwSep<k::omp::dwsep_conv2d>)->Name("dwsep_conv/omp")->Arg(64)->Arg(128);

BENCHMARK_MAIN();
