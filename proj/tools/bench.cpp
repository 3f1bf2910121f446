// Times co-training steps for a LeNet-5 pair on random 28x28 inputs.
#include "colearn/co_trainer.hpp"

#include <chrono>
#include <cstdio>

int main(int argc, char** argv) {
    using namespace colearn;
    tune_allocator();
    const int steps = argc > 1 ? std::atoi(argv[1]) : 20;
    const int batch = argc > 2 ? std::atoi(argv[2]) : 128;
    const auto arch = lenet5({1, 28, 28}, 10);
    auto ens = Ensemble<float>::create(arch, {1, 2}, CouplingMatrix<float>::uniform(-1.0, 2));
    Rng rng(7);
    RowMatrixX<float> x(batch, 784);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.uniform());
    RowMatrixX<float> q = RowMatrixX<float>::Zero(batch, 10);
    for (int r = 0; r < batch; ++r) q(r, r % 10) = 1;
    TrainConfig cfg;
    const auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < steps; ++s) train_step(ens, x, q, cfg, 0);
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%.3f ms/step, %.1f us/sample/network\n", 1e3 * sec / steps, 1e6 * sec / steps / batch / 2);
}
