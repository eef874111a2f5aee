#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "siren/rvq/tokenizer.h"

using namespace siren;
using namespace siren::rvq;

namespace {

// Independent nearest-neighbour scan in long double.
int brute_force_nearest(const std::vector<float>& x, const Codebook& book) {
    int best = -1;
    long double bd = std::numeric_limits<long double>::infinity();
    for (int k = 0; k < book.vocab(); ++k) {
        long double d = 0;
        for (int i = 0; i < book.dim(); ++i) {
            const long double e = static_cast<long double>(x[static_cast<size_t>(i)]) - book.table.row(k)[i];
            d += e * e;
        }
        if (d < bd) {
            bd = d;
            best = k;
        }
    }
    return best;
}

Codebook make_book(std::vector<float> rows, int v, int c) {
    Codebook b;
    b.table = Tensor({v, c}, std::move(rows));
    return b;
}

}  // namespace

TEST_CASE("quantize_layer two-code example") {
    auto book = make_book({1, 0, 0, 1}, 2, 2);
    std::vector<float> r = {0.9f, 0.1f};
    auto q = quantize_layer(std::span<const float>(r), book);
    CHECK(q.code == 0);
    CHECK(q.next_residual[0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(q.next_residual[1] == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("quantize_layer ties go to the lowest index") {
    auto book = make_book({1, 0, 0, 1, 1, 0}, 3, 2);
    std::vector<float> r = {0.5f, 0.5f};
    CHECK(quantize_layer(std::span<const float>(r), book).code == 0);
    std::vector<float> r2 = {2.0f, 0.0f};
    CHECK(quantize_layer(std::span<const float>(r2), book).code == 0);
}

TEST_CASE("quantize_layer errors") {
    Codebook empty;
    std::vector<float> r = {1.0f};
    CHECK_THROWS_AS(quantize_layer(std::span<const float>(r), empty), std::invalid_argument);
}

TEST_CASE("quantize_layer matches brute force on random cases") {
    nn::Rng rng(42);
    for (int trial = 0; trial < 2000; ++trial) {
        Codebook book;
        book.table = nn::normal_tensor<float>({16, 4}, 1.0, rng);
        auto x = nn::normal_tensor<float>({4}, 1.0, rng).data;
        auto q = quantize_layer(std::span<const float>(x), book);
        CHECK(q.code == brute_force_nearest(x, book));
        CHECK(lookup(book, q.code) == q.embedding);
    }
}

TEST_CASE("lookup bounds") {
    auto book = make_book({1, 2, 3, 4}, 2, 2);
    CHECK(lookup(book, 0) == std::vector<float>{1, 2});
    CHECK_THROWS_AS(lookup(book, 2), std::out_of_range);
    CHECK_THROWS_AS(lookup(book, -1), std::out_of_range);
}

TEST_CASE("rvq_tokenize identities on random codebooks") {
    nn::Rng rng(1);
    std::vector<Codebook> books;
    for (int j = 0; j < 6; ++j) {
        Codebook b;
        b.layer = j;
        b.table = nn::normal_tensor<float>({32, 8}, 1.0 / (1 + j), rng);
        books.push_back(b);
    }
    LatentFeature f{nn::normal_tensor<float>({20, 8}, 1.0, rng), Provenance::encoded};
    auto res = rvq_tokenize(f, books, 6);
    auto sum = lookup_sum(res.grid, books);
    CHECK(sum.data == res.quantized_sum.data);
    for (int t = 0; t < 20; ++t) {
        for (int i = 0; i < 8; ++i) {
            double acc = 0;
            for (int j = 0; j < 6; ++j) {
                acc += books[static_cast<size_t>(j)].table.row(res.grid.at(j, t))[i];
            }
            CHECK(acc + res.residual[static_cast<size_t>(t) * 8 + i] == static_cast<double>(f.values.row(t)[i]));
        }
    }
    // depth one is plain nearest-neighbour quantisation
    auto one = rvq_tokenize(f, books, 1);
    for (int t = 0; t < 20; ++t) {
        std::vector<float> x(f.values.row(t), f.values.row(t) + 8);
        CHECK(one.grid.at(0, t) == brute_force_nearest(x, books[0]));
    }
    CHECK_THROWS(rvq_tokenize(f, books, 7));
}

TEST_CASE("encode and decode shapes") {
    TokenizerConfig cfg;
    cfg.depth = 3;
    Tokenizer tok(cfg);
    auto w = data::generate_clip(2, 5);
    auto f = tok.encode(w);
    CHECK(f.length() == 125);
    CHECK(f.dim() == 32);
    CHECK(tok.encode(w).values.data == f.values.data);
    auto y = tok.decode(f.values);
    CHECK(y.samples.size() == 8000);
    CHECK(tok.decode(f.values).samples == y.samples);
    data::Waveform odd;
    odd.samples.assign(100, 0.0f);
    CHECK_THROWS_AS(tok.encode(odd), std::invalid_argument);
    CHECK_THROWS_AS(tok.decode(Tensor({4, 31})), std::invalid_argument);
}

TEST_CASE("untrained tokenizer rejected by energy analysis") {
    TokenizerConfig cfg;
    cfg.depth = 2;
    Tokenizer tok(cfg);
    CHECK_THROWS(layer_residual_energy(tok.encode(data::generate_clip(0, 1)), tok));
}

TEST_CASE("single-batch overfit and trained tokenizer properties") {
    data::DatasetConfig dc;
    dc.train_size = 150;
    dc.val_size = 30;
    dc.rl_size = 15;
    auto ds = data::build_dataset(dc);

    TokenizerConfig cfg;
    cfg.depth = 4;
    cfg.batch = 4;
    Tokenizer tok(cfg);
    nn::Rng rng(3);
    std::vector<std::vector<float>> crops;
    for (int i = 0; i < 4; ++i) {
        const auto& s = ds.train.items[static_cast<size_t>(i)].wave.samples;
        crops.emplace_back(s.begin(), s.begin() + cfg.crop);
    }
    const double first = tok.train_step(crops, rng).loss;
    double last = first;
    for (int s = 1; s < 500; ++s) {
        last = tok.train_step(crops, rng).loss;
    }
    MESSAGE("overfit loss ", first, " -> ", last);
    CHECK(last < 0.1 * first);

    TokenizerConfig full;
    full.depth = 4;
    full.steps = 1500;
    Tokenizer untrained(full);
    Tokenizer trained = train_tokenizer(ds.train.items, full);
    const std::vector<data::Example> one = {ds.train.items[0]};
    const double before = reconstruction_mse(untrained, one);
    const double after = reconstruction_mse(trained, one);
    MESSAGE("training clip mse untrained ", before, " trained ", after);
    CHECK(after * 10 < before);

    auto usage = codebook_usage(trained, ds.train.items);
    for (double u : usage) {
        CHECK(u >= 0.5);
    }

    int non_increasing = 0, total = 0;
    std::vector<double> ratios;
    for (const auto& ex : ds.val.items) {
        auto f = trained.encode(ex.wave);
        auto e = layer_residual_energy(f, trained);
        double direct = 0;
        for (float v : f.values.data) {
            direct += static_cast<double>(v) * v;
        }
        CHECK(std::accumulate(e.per_step[0].begin(), e.per_step[0].end(), 0.0) == doctest::Approx(direct));
        for (int t = 0; t < f.length(); ++t) {
            for (int j = 1; j <= trained.depth(); ++j) {
                non_increasing += e.per_step[static_cast<size_t>(j)][static_cast<size_t>(t)] <=
                                  e.per_step[static_cast<size_t>(j - 1)][static_cast<size_t>(t)];
                ++total;
            }
            ratios.push_back(e.per_step.back()[static_cast<size_t>(t)] / e.per_step[1][static_cast<size_t>(t)]);
        }
    }
    CHECK(non_increasing >= 0.9 * total);
    std::nth_element(ratios.begin(), ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2), ratios.end());
    CHECK(ratios[ratios.size() / 2] < 1.0);

    auto w = ds.val.items[0].wave;
    auto tk = trained.tokenize(w);
    CHECK(trained.detokenize(tk.grid).samples == trained.reconstruct(w).samples);
    CHECK(trained.detokenize(tk.grid).samples == trained.detokenize(tk.grid).samples);
}
