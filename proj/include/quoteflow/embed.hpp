#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "quoteflow/corpus.hpp"

namespace quoteflow {

struct EmbeddingMatrix {
  Eigen::MatrixXd vectors;  // one row per quote, aligned with quote_ids
  std::vector<std::string> quote_ids;
  std::string provider_tag;
};

struct ReducedMatrix {
  Eigen::MatrixXd vectors;             // n x k scores on the principal axes
  Eigen::VectorXd explained_variance;  // k eigenvalues, nonincreasing
  std::vector<std::string> quote_ids;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string tag() const = 0;
  virtual Eigen::MatrixXd embed(const std::vector<std::string>& texts) = 0;
};

// Deterministic offline provider: character n-grams (n = 3..5) of the
// byte-padded text, signed feature hashing into a fixed-width vector,
// L2-normalized. Identical text always maps to the identical row.
class HashedNgramProvider : public EmbeddingProvider {
 public:
  explicit HashedNgramProvider(int dim = 256) : dim_(dim) {}
  std::string tag() const override { return "ngram-hash-" + std::to_string(dim_); }
  Eigen::MatrixXd embed(const std::vector<std::string>& texts) override;
  Eigen::VectorXd embed_one(const std::string& text) const;

 private:
  int dim_;
};

// Runs `command <request> <response>`: request is a newline-delimited text
// file, response a CSV matrix with row order preserved.
class CommandProvider : public EmbeddingProvider {
 public:
  CommandProvider(std::string tag, std::string command, std::string work_dir,
                  int max_retries = 2)
      : tag_(std::move(tag)), command_(std::move(command)),
        work_dir_(std::move(work_dir)), max_retries_(max_retries) {}
  std::string tag() const override { return tag_; }
  Eigen::MatrixXd embed(const std::vector<std::string>& texts) override;

 private:
  std::string tag_, command_, work_dir_;
  int max_retries_;
};

// One row per corpus record, L2 norm 1 within 1e-6. Throws on provider
// failure after bounded retries or on dimension mismatch across batches.
EmbeddingMatrix embed(const Corpus& corpus, EmbeddingProvider& provider,
                      std::size_t batch_size = 1024);

// Projects onto the top-k principal axes of the mean-centered data.
// Sign convention: the largest-magnitude loading of each axis is positive.
ReducedMatrix reduce(const EmbeddingMatrix& emb, int k = 70);

// Binary on-disk cache for embedding matrices, keyed externally by
// (provider_tag, corpus hash).
void save_matrix(const std::string& path, const EmbeddingMatrix& m);
EmbeddingMatrix load_matrix(const std::string& path);
void save_reduced(const std::string& path, const ReducedMatrix& m);
ReducedMatrix load_reduced(const std::string& path);

}  // namespace quoteflow
