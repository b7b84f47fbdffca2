#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "nalsuper/train.hpp"
#include "oracles.hpp"

using namespace nalsuper;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ModelConfig small_config(std::uint64_t seed = 7) {
    ModelConfig cfg;
    cfg.channels = 4;
    cfg.num_blocks = 2;
    cfg.attention_dim = 4;
    cfg.d_tau = 8;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("image quantization round trip: 0 and 255 map exactly") {
    using T = Tensor<double>;
    T img = T::from({3, 1, 2}, {0.0, 1.0, 0.0, 1.0, 0.0, 1.0});
    fs::path dir = temp_dir("nalsuper_io");
    for (const char* name : {"t.png", "t.ppm"}) {
        std::string path = (dir / name).string();
        write_image(img, path);
        T back = read_image<double>(path);
        REQUIRE(back.shape == img.shape);
        CHECK(back.at(0) == 0.0);
        CHECK(back.at(1) == 1.0);
    }
}

TEST_CASE("png and ppm round trip preserves quantized values") {
    using T = Tensor<double>;
    std::mt19937_64 rng(90);
    T img = T::from({3, 8, 9}, oracle::random_vec(3 * 72, rng, 0.0, 1.0));
    fs::path dir = temp_dir("nalsuper_io_rt");
    for (const char* name : {"r.png", "r.ppm"}) {
        std::string path = (dir / name).string();
        write_image(img, path);
        T back = read_image<double>(path);
        for (std::size_t i = 0; i < img.numel(); ++i) {
            double q = std::floor(std::min(1.0, std::max(0.0, img.at(i))) * 255.0 + 0.5) / 255.0;
            CHECK(std::abs(back.at(i) - q) < 1e-12);
        }
    }
}

TEST_CASE("paired dataset loading: order, scaling, errors") {
    using T = Tensor<double>;
    fs::path dir = temp_dir("nalsuper_pairs");
    fs::create_directories(dir / "low");
    fs::create_directories(dir / "gt");
    T a = T::full({3, 4, 4}, 0.25);
    T b = T::full({3, 4, 4}, 1.0);
    write_png(a, (dir / "low" / "b.png").string());
    write_png(b, (dir / "gt" / "b.png").string());
    write_png(a, (dir / "low" / "a.png").string());
    write_png(b, (dir / "gt" / "a.png").string());

    auto pairs = load_paired_dataset<double>((dir / "low").string(), (dir / "gt").string());
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].id == "a.png");
    CHECK(pairs[1].id == "b.png");
    CHECK(pairs[0].gt.at(0) == 1.0);  // 8-bit 255 -> exactly 1.0

    write_png(a, (dir / "low" / "only_low.png").string());
    CHECK_THROWS_WITH(load_paired_dataset<double>((dir / "low").string(), (dir / "gt").string()),
                      Catch::Matchers::ContainsSubstring("only_low.png"));
    fs::remove(dir / "low" / "only_low.png");

    write_png(T::full({3, 6, 6}, 0.5), (dir / "low" / "c.png").string());
    write_png(b, (dir / "gt" / "c.png").string());
    CHECK_THROWS_AS(load_paired_dataset<double>((dir / "low").string(), (dir / "gt").string()),
                    UsageError);
}

TEST_CASE("synthetic pairs are deterministic and darker than ground truth") {
    auto p1 = make_synthetic<double>(3, 16, 16, 42);
    auto p2 = make_synthetic<double>(3, 16, 16, 42);
    REQUIRE(p1.size() == 3);
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(*p1[i].low.data == *p2[i].low.data);
        CHECK(*p1[i].gt.data == *p2[i].gt.data);
        double mean_low = 0.0, mean_gt = 0.0;
        for (std::size_t j = 0; j < p1[i].low.numel(); ++j) {
            mean_low += p1[i].low.at(j);
            mean_gt += p1[i].gt.at(j);
            CHECK(p1[i].low.at(j) >= 0.0);
            CHECK(p1[i].low.at(j) <= 1.0);
        }
        CHECK(mean_low < mean_gt);
        double p = psnr(p1[i].low, p1[i].gt);
        CHECK(std::isfinite(p));
        CHECK(p < 25.0);
    }
    CHECK_THROWS_AS(make_synthetic<double>(1, 8, 8, 0), UsageError);
}

TEST_CASE("adam first step matches the closed form") {
    using T = Tensor<double>;
    T p = T::param({1}, {0.5});
    (*p.grad)[0] = 0.2;
    std::vector<ParamRef<double>> params{{"p", p}};
    AdamState<double> state;
    state.lr = 1e-4;
    adam_step(params, state);
    // first step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
    double expect = 0.5 - 1e-4 * (0.2 / (0.2 + 1e-8));
    CHECK(std::abs(p.at(0) - expect) < 1e-12);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
    using T = Tensor<float>;
    T p = T::param({3}, {0.1f, -0.2f, 0.3f});
    std::vector<ParamRef<float>> params{{"p", p}};
    AdamState<float> state;
    std::vector<float> before = *p.data;
    for (int i = 0; i < 5; ++i) adam_step(params, state);
    CHECK(*p.data == before);

    T q = T::from({1}, {1.0f});  // no grad buffer
    std::vector<ParamRef<float>> bad{{"q", q}};
    AdamState<float> s2;
    CHECK_THROWS_AS(adam_step(bad, s2), UsageError);
}

TEST_CASE("train with zero steps changes nothing") {
    auto emb = make_test_embedding_set(default_prompts(), 8, 0);
    auto model = init_model<float>(small_config(), emb);
    auto pairs = make_synthetic<float>(2, 16, 16, 1);
    std::vector<std::vector<float>> before;
    for (auto& p : model.parameters()) before.push_back(*p.tensor.data);
    TrainRun run = train(model, pairs, LossConfig::L1Ssim, 0, 1);
    CHECK(run.trace.empty());
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(*params[i].tensor.data == before[i]);
}

TEST_CASE("training is bitwise deterministic and keeps embeddings frozen") {
    auto emb = make_test_embedding_set(default_prompts(), 8, 0);
    auto pairs = make_synthetic<float>(2, 16, 16, 5);

    auto run_once = [&]() {
        auto model = init_model<float>(small_config(), emb);
        train(model, pairs, LossConfig::L1Ssim, 25, 5);
        std::vector<std::vector<float>> out;
        for (auto& p : model.parameters()) out.push_back(*p.tensor.data);
        return out;
    };
    auto r1 = run_once();
    auto r2 = run_once();
    CHECK(r1 == r2);

    // frozen-text contract
    auto model = init_model<float>(small_config(), emb);
    std::vector<float> text_before = *model.text.data;
    auto emb_before = model.embeddings;
    train(model, pairs, LossConfig::L1Ssim, 25, 5);
    CHECK(*model.text.data == text_before);
    for (int i = 0; i < emb.count(); ++i)
        CHECK(model.embeddings.entries[static_cast<std::size_t>(i)].vector ==
              emb_before.entries[static_cast<std::size_t>(i)].vector);
}

TEST_CASE("short training run decreases the loss without NaNs") {
    auto emb = make_test_embedding_set(default_prompts(), 8, 0);
    auto model = init_model<float>(small_config(), emb);
    auto pairs = make_synthetic<float>(2, 16, 16, 9);
    TrainRun run = train(model, pairs, LossConfig::L1Ssim, 200, 9, 1e-3);
    REQUIRE(run.trace.size() == 200);
    for (const auto& r : run.trace) CHECK(std::isfinite(r.total));
    CHECK(run.trace.back().total < run.trace.front().total);
}

TEST_CASE("l1 and ssim ablation configs train independently") {
    auto emb = make_test_embedding_set(default_prompts(), 8, 0);
    auto pairs = make_synthetic<float>(2, 16, 16, 11);
    for (LossConfig cfg : {LossConfig::L1, LossConfig::Ssim}) {
        auto model = init_model<float>(small_config(), emb);
        TrainRun run = train(model, pairs, cfg, 10, 11);
        REQUIRE(run.trace.size() == 10);
        if (cfg == LossConfig::L1) CHECK(run.trace[0].ssim == 0.0);
        else CHECK(run.trace[0].l1 == 0.0);
    }
}

TEST_CASE("evaluate on an identity model reports metrics of (low, gt)") {
    auto emb = make_test_embedding_set(default_prompts(), 8, 0);
    auto model = init_model<float>(small_config(), emb);
    auto pairs = make_synthetic<float>(3, 16, 16, 13);
    EvalReport report = evaluate(model, pairs);
    REQUIRE(report.rows.size() == 3);
    SsimConstants k;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(std::abs(report.rows[i].psnr_db - psnr(pairs[i].low, pairs[i].gt)) < 1e-9);
        CHECK(std::abs(report.rows[i].mae - mae(pairs[i].low, pairs[i].gt)) < 1e-9);
        CHECK(std::abs(report.rows[i].ssim - ssim_metric(pairs[i].low, pairs[i].gt, k)) < 1e-9);
    }
    double mean = (report.rows[0].psnr_db + report.rows[1].psnr_db + report.rows[2].psnr_db) / 3.0;
    CHECK(std::abs(report.mean_psnr() - mean) < 1e-12);
}
