#include "quoteflow/embed.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include "quoteflow/util.hpp"

namespace quoteflow {

namespace fs = std::filesystem;

// ---- built-in provider -----------------------------------------------------

Eigen::VectorXd HashedNgramProvider::embed_one(const std::string& text) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
  // STX/ETX padding so even one-character texts produce trigrams.
  std::string padded;
  padded.reserve(text.size() + 4);
  padded += "\x02\x02";
  padded += text;
  padded += "\x03\x03";
  for (int n = 3; n <= 5; ++n) {
    if (padded.size() < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + n <= padded.size(); ++i) {
      std::uint64_t h = fnv1a64(padded.data() + i, n);
      h = fnv1a64_combine(h, static_cast<std::uint64_t>(n));
      const int idx = static_cast<int>(h % static_cast<std::uint64_t>(dim_));
      const double sign = ((h >> 32) & 1u) ? 1.0 : -1.0;
      v[idx] += sign;
    }
  }
  const double norm = v.norm();
  if (norm > 0.0) {
    v /= norm;
  } else {
    v[0] = 1.0;
  }
  return v;
}

Eigen::MatrixXd HashedNgramProvider::embed(const std::vector<std::string>& texts) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(texts.size()), dim_);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = embed_one(texts[i]).transpose();
  }
  return out;
}

// ---- external command provider ---------------------------------------------

Eigen::MatrixXd CommandProvider::embed(const std::vector<std::string>& texts) {
  fs::create_directories(work_dir_);
  const std::string req = (fs::path(work_dir_) / "provider_request.txt").string();
  const std::string resp = (fs::path(work_dir_) / "provider_response.csv").string();
  {
    std::ostringstream ss;
    for (const auto& t : texts) {
      std::string flat = t;
      for (auto& c : flat) {
        if (c == '\n' || c == '\r') c = ' ';
      }
      ss << flat << '\n';
    }
    write_text_file(req, ss.str());
  }

  std::string last_error;
  for (int attempt = 0; attempt <= max_retries_; ++attempt) {
    std::error_code ec;
    fs::remove(resp, ec);
    const std::string cmd = command_ + " " + req + " " + resp;
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
      last_error = "provider command exited with status " + std::to_string(rc);
      continue;
    }
    std::ifstream in(resp);
    if (!in) {
      last_error = "provider wrote no response file";
      continue;
    }
    std::vector<std::vector<double>> rows;
    std::string line;
    bool parse_ok = true;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      std::vector<double> row;
      for (const auto& f : csv_split(line)) {
        try {
          row.push_back(std::stod(f));
        } catch (...) {
          parse_ok = false;
          break;
        }
      }
      if (!parse_ok) break;
      rows.push_back(std::move(row));
    }
    if (!parse_ok || rows.size() != texts.size()) {
      last_error = "provider response malformed (" + std::to_string(rows.size()) +
                   " rows for " + std::to_string(texts.size()) + " texts)";
      continue;
    }
    const std::size_t d = rows.front().size();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != d) throw Error("provider response has ragged rows");
      for (std::size_t j = 0; j < d; ++j) {
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
      }
    }
    return out;
  }
  throw Error("embedding provider failed after " + std::to_string(max_retries_ + 1) +
              " attempts: " + last_error);
}

// ---- embed / reduce ---------------------------------------------------------

EmbeddingMatrix embed(const Corpus& corpus, EmbeddingProvider& provider,
                      std::size_t batch_size) {
  EmbeddingMatrix m;
  m.provider_tag = provider.tag();
  m.quote_ids.reserve(corpus.records.size());
  for (const auto& r : corpus.records) m.quote_ids.push_back(r.quote_id);

  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t start = 0; start < corpus.records.size(); start += batch_size) {
    ranges.emplace_back(start, std::min(start + batch_size, corpus.records.size()));
  }
  auto run_batch = [&](std::size_t start, std::size_t end) {
    std::vector<std::string> texts;
    texts.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) texts.push_back(corpus.records[i].text);
    Eigen::MatrixXd block = provider.embed(texts);
    if (block.rows() != static_cast<Eigen::Index>(texts.size())) {
      throw Error("provider returned wrong row count");
    }
    return block;
  };
  // The built-in provider is pure, so disjoint batches run concurrently;
  // an external command keeps one request in flight at a time.
  const bool parallel =
      dynamic_cast<CommandProvider*>(&provider) == nullptr && ranges.size() > 1;
  std::vector<Eigen::MatrixXd> blocks(ranges.size());
  if (parallel) {
    std::vector<std::future<Eigen::MatrixXd>> jobs;
    for (const auto& [start, end] : ranges) {
      jobs.push_back(std::async(std::launch::async, run_batch, start, end));
    }
    for (std::size_t b = 0; b < jobs.size(); ++b) blocks[b] = jobs[b].get();
  } else {
    for (std::size_t b = 0; b < ranges.size(); ++b) {
      blocks[b] = run_batch(ranges[b].first, ranges[b].second);
    }
  }
  Eigen::Index dim = -1;
  for (const auto& block : blocks) {
    if (dim < 0) dim = block.cols();
    if (block.cols() != dim) throw Error("provider dimension mismatch across batches");
  }
  if (dim < 0) dim = 0;
  m.vectors.resize(static_cast<Eigen::Index>(corpus.records.size()), dim);
  Eigen::Index row = 0;
  for (const auto& b : blocks) {
    m.vectors.middleRows(row, b.rows()) = b;
    row += b.rows();
  }
  if (!m.vectors.allFinite()) throw Error("provider returned non-finite embeddings");
  for (Eigen::Index i = 0; i < m.vectors.rows(); ++i) {
    const double norm = m.vectors.row(i).norm();
    if (norm > 0.0) m.vectors.row(i) /= norm;
  }
  return m;
}

ReducedMatrix reduce(const EmbeddingMatrix& emb, int k) {
  const Eigen::Index n = emb.vectors.rows();
  const Eigen::Index d = emb.vectors.cols();
  if (n < 2) throw Error("reduce: need at least 2 rows");
  if (k < 1 || k > std::min<Eigen::Index>(n, d)) {
    throw Error("reduce: k=" + std::to_string(k) + " out of range for " +
                std::to_string(n) + "x" + std::to_string(d) + " input");
  }
  if (!emb.vectors.allFinite()) throw Error("reduce: non-finite input");

  const Eigen::RowVectorXd mean = emb.vectors.colwise().mean();
  const Eigen::MatrixXd centered = emb.vectors.rowwise() - mean;
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("reduce: eigensolver failed");

  ReducedMatrix out;
  out.quote_ids = emb.quote_ids;
  out.vectors.resize(n, k);
  out.explained_variance.resize(k);
  // Eigen returns ascending eigenvalues; take the top k, enforce the sign
  // convention (largest-magnitude loading positive).
  for (int c = 0; c < k; ++c) {
    const Eigen::Index src = d - 1 - c;
    Eigen::VectorXd axis = solver.eigenvectors().col(src);
    Eigen::Index imax = 0;
    axis.cwiseAbs().maxCoeff(&imax);
    if (axis[imax] < 0.0) axis = -axis;
    out.vectors.col(c) = centered * axis;
    out.explained_variance[c] = std::max(0.0, solver.eigenvalues()[src]);
  }
  return out;
}

// ---- binary cache -----------------------------------------------------------

namespace {

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const std::uint64_t len = read_u64(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      write_u64(out, bits);
    }
  }
}

Eigen::MatrixXd read_matrix(std::istream& in) {
  const auto rows = static_cast<Eigen::Index>(read_u64(in));
  const auto cols = static_cast<Eigen::Index>(read_u64(in));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const std::uint64_t bits = read_u64(in);
      double v;
      std::memcpy(&v, &bits, 8);
      m(i, j) = v;
    }
  }
  return m;
}

void write_ids(std::ostream& out, const std::vector<std::string>& ids) {
  write_u64(out, ids.size());
  for (const auto& id : ids) write_string(out, id);
}

std::vector<std::string> read_ids(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::vector<std::string> ids(n);
  for (auto& id : ids) id = read_string(in);
  return ids;
}

}  // namespace

void save_matrix(const std::string& path, const EmbeddingMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write("QFEMB1", 6);
  write_string(out, m.provider_tag);
  write_ids(out, m.quote_ids);
  write_matrix(out, m.vectors);
  if (!out) throw Error("write failed: " + path);
}

EmbeddingMatrix load_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  char magic[6];
  in.read(magic, 6);
  if (std::string(magic, 6) != "QFEMB1") throw Error("bad embedding file: " + path);
  EmbeddingMatrix m;
  m.provider_tag = read_string(in);
  m.quote_ids = read_ids(in);
  m.vectors = read_matrix(in);
  if (!in) throw Error("truncated embedding file: " + path);
  return m;
}

void save_reduced(const std::string& path, const ReducedMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write("QFRED1", 6);
  write_ids(out, m.quote_ids);
  write_matrix(out, m.vectors);
  Eigen::MatrixXd ev = m.explained_variance;
  write_matrix(out, ev);
  if (!out) throw Error("write failed: " + path);
}

ReducedMatrix load_reduced(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  char magic[6];
  in.read(magic, 6);
  if (std::string(magic, 6) != "QFRED1") throw Error("bad reduced file: " + path);
  ReducedMatrix m;
  m.quote_ids = read_ids(in);
  m.vectors = read_matrix(in);
  m.explained_variance = read_matrix(in);
  if (!in) throw Error("truncated reduced file: " + path);
  return m;
}

}  // namespace quoteflow
