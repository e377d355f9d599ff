#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "advgen/tensor.hpp"

using namespace advgen;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove(p);
    return p;
}

}  // namespace

TEST(Shape, NumelAndValidation) {
    EXPECT_EQ(shape_numel({2, 3, 4}), 24);
    EXPECT_EQ(shape_numel({1}), 1);
    EXPECT_THROW(shape_numel({2, 0}), ShapeError);
    EXPECT_THROW(shape_numel({-1}), ShapeError);
    EXPECT_EQ(shape_str({3, 32, 32}), "[3,32,32]");
}

TEST(Tensor, ConstructorsAndAccess) {
    Tensor z = Tensor::zeros({2, 2});
    for (float v : z.data()) EXPECT_EQ(v, 0.0f);

    Tensor f = Tensor::full({3}, 1.5f);
    for (float v : f.data()) EXPECT_EQ(v, 1.5f);

    Tensor t = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3});
    EXPECT_EQ(t.rank(), 2);
    EXPECT_EQ(t.dim(0), 2);
    EXPECT_EQ(t.dim(1), 3);
    EXPECT_EQ(t.numel(), 6);
    EXPECT_EQ(t.ptr()[5], 6.0f);
    EXPECT_THROW(Tensor::from({1, 2}, {3}), ShapeError);

    EXPECT_EQ(Tensor::scalar(7.0f).item(), 7.0f);
    EXPECT_THROW(t.item(), UsageError);
}

TEST(Tensor, CopySharesStorageCloneDoesNot) {
    Tensor a = Tensor::from({1, 2}, {2});
    Tensor b = a;
    b.ptr()[0] = 9.0f;
    EXPECT_EQ(a.ptr()[0], 9.0f);
    EXPECT_TRUE(a.same_storage(b));

    Tensor c = a.clone();
    EXPECT_FALSE(a.same_storage(c));
    c.ptr()[0] = 5.0f;
    EXPECT_EQ(a.ptr()[0], 9.0f);
}

TEST(Tensor, GradLifecycle) {
    Tensor t = Tensor::zeros({4});
    EXPECT_FALSE(t.has_grad());
    t.grad()[1] = 3.0f;
    EXPECT_TRUE(t.has_grad());
    t.zero_grad();
    EXPECT_EQ(t.grad()[1], 0.0f);
}

TEST(Tensor, FiniteScanAndHash) {
    Tensor t = Tensor::from({1, 2, 3}, {3});
    EXPECT_TRUE(t.all_finite());
    uint64_t h1 = t.content_hash();
    Tensor u = t.clone();
    EXPECT_EQ(u.content_hash(), h1);
    u.ptr()[2] = 3.0001f;
    EXPECT_NE(u.content_hash(), h1);

    t.ptr()[0] = std::numeric_limits<float>::infinity();
    EXPECT_FALSE(t.all_finite());
}

TEST(Tensor, HashDependsOnShape) {
    Tensor a = Tensor::from({1, 2, 3, 4}, {2, 2});
    Tensor b = Tensor::from({1, 2, 3, 4}, {4});
    EXPECT_NE(a.content_hash(), b.content_hash());
}

TEST(AllocStats, PeakTracksLiveBytes) {
    AllocStats::reset_peak();
    int64_t before = AllocStats::peak().load();
    {
        Tensor big = Tensor::zeros({1024, 1024});
        EXPECT_GE(AllocStats::peak().load(), before + 4 * 1024 * 1024);
    }
    int64_t after_free = AllocStats::live().load();
    AllocStats::reset_peak();
    EXPECT_EQ(AllocStats::peak().load(), after_free);
}

TEST(Container, RoundTripExactBytes) {
    fs::path p = temp_file("advgen_rt.cvt");
    Tensor t = Tensor::from({0.5f, -1.25f, 3e-7f, 1024.0f, -0.0f, 42.0f}, {2, 3, 1});
    save_tensor(t, p);

    std::ifstream f(p, std::ios::binary);
    std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    ASSERT_EQ(raw.size(), 4u + 1u + 3u * 4u + 6u * 4u);
    EXPECT_EQ(raw[0], 'C');
    EXPECT_EQ(raw[4], 3);  // rank

    Tensor u = load_tensor(p);
    EXPECT_EQ(u.shape(), t.shape());
    for (int64_t i = 0; i < t.numel(); ++i) EXPECT_EQ(u.ptr()[i], t.ptr()[i]);
    fs::remove(p);
}

TEST(Container, MalformedInputsReportOffsets) {
    fs::path p = temp_file("advgen_bad.cvt");

    {
        std::ofstream f(p, std::ios::binary);
        f << "NOPE";
    }
    try {
        load_tensor(p);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("at byte 0"), std::string::npos);
    }

    {
        std::ofstream f(p, std::ios::binary);
        f << "CVT1";
        uint8_t rank = 1;
        uint32_t ext = 10;
        f.write(reinterpret_cast<char*>(&rank), 1);
        f.write(reinterpret_cast<char*>(&ext), 4);
        float vals[3] = {1, 2, 3};  // payload too short
        f.write(reinterpret_cast<char*>(vals), sizeof(vals));
    }
    try {
        load_tensor(p);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("truncated payload"), std::string::npos);
    }

    {
        std::ofstream f(p, std::ios::binary);
        f << "CVT1";
        uint8_t rank = 2;
        uint32_t ext0 = 4, ext1 = 0;
        f.write(reinterpret_cast<char*>(&rank), 1);
        f.write(reinterpret_cast<char*>(&ext0), 4);
        f.write(reinterpret_cast<char*>(&ext1), 4);
    }
    EXPECT_THROW(load_tensor(p), IoError);
    EXPECT_THROW(load_tensor(fs::temp_directory_path() / "advgen_missing.cvt"), IoError);
    fs::remove(p);
}

TEST(Rng, DeterministicAndForkIndependent) {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());

    Rng c(123);
    Rng f1 = c.fork("weights");
    Rng f2 = c.fork("data");
    Rng f1b = Rng(123).fork("weights");
    EXPECT_EQ(f1.next(), f1b.next());
    EXPECT_NE(f1.next(), f2.next());
}

TEST(Rng, UniformRangeAndNormalMoments) {
    Rng r(7);
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < 20000; ++i) {
        float u = r.uniform();
        ASSERT_GE(u, 0.0f);
        ASSERT_LT(u, 1.0f);
        sum += u;
        sumsq += static_cast<double>(u) * u;
    }
    EXPECT_NEAR(sum / 20000, 0.5, 0.01);
    EXPECT_NEAR(sumsq / 20000 - 0.25, 1.0 / 12, 0.01);

    Rng g(9);
    double nsum = 0.0, nsq = 0.0;
    for (int i = 0; i < 20000; ++i) {
        float x = g.normal();
        nsum += x;
        nsq += static_cast<double>(x) * x;
    }
    EXPECT_NEAR(nsum / 20000, 0.0, 0.03);
    EXPECT_NEAR(nsq / 20000, 1.0, 0.05);

    Rng lim(11);
    for (int i = 0; i < 1000; ++i) {
        float v = lim.uniform(-2.0f, 2.0f);
        ASSERT_GE(v, -2.0f);
        ASSERT_LT(v, 2.0f);
        ASSERT_LT(lim.below(10), 10u);
    }
}
