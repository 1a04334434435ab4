// Times the tiled OpenMP rasterizer against the serial reference on the same
// scenes and prints a small table. Also cross-checks that both paths agree
// before trusting the numbers.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "splat/synthetic.hpp"

using namespace splat;

namespace {

double time_avg(std::size_t repeats, const std::function<void()>& fn) {
    fn();
    auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < repeats; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / double(repeats);
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t repeats = argc > 1 ? std::size_t(std::atol(argv[1])) : 5;
    std::printf("%8s %8s %10s %12s %12s %8s\n", "size", "splats", "max|diff|", "tiled s",
                "serial s", "speedup");

    for (std::size_t n : {500u, 2000u, 8000u}) {
        SyntheticSceneSpec spec;
        spec.n_primitives = n;
        spec.frames = 1;
        spec.width = 64;
        spec.height = 64;
        spec.seed = 7;
        SyntheticDataset ds = gen_head_dataset(spec);
        const auto& scene = ds.frame_scenes[0];
        RenderTarget target{spec.width, spec.height, {0, 0, 0}};

        Image tiled_img = rasterize(scene, ds.cam, target);
        Image serial_img = rasterize_naive_oracle(scene, ds.cam, target);
        double diff = image_max_abs_diff(tiled_img, serial_img);

        double tiled = time_avg(repeats, [&] { rasterize(scene, ds.cam, target); });
        double serial = time_avg(repeats, [&] { rasterize_naive_oracle(scene, ds.cam, target); });
        std::printf("%5zux%-2zu %8zu %10.3e %12.6f %12.6f %7.2fx\n", spec.width, spec.height, n,
                    diff, tiled, serial, serial / tiled);
        if (diff > 1e-6) {
            std::fprintf(stderr, "implementations disagree (%g), timings are meaningless\n",
                         diff);
            return 1;
        }
    }
    return 0;
}
