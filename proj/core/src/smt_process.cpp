// External SMT-LIB2 solver driven over a socket pair.

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <map>

#include "poirot/error.hpp"
#include "solver_impl.hpp"

extern char** environ;

namespace poirot::solver::detail {

namespace {

class SmtProcess {
 public:
  SmtProcess(const std::string& path, const std::vector<std::string>& args) {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
      throw SolverError(std::string("socketpair: ") + std::strerror(errno));
    }
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, fds[1], 0);
    posix_spawn_file_actions_adddup2(&fa, fds[1], 1);
    posix_spawn_file_actions_addopen(&fa, 2, "/dev/null", O_WRONLY, 0);

    std::vector<std::string> argv_store{path};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());
    argv.push_back(nullptr);

    const int rc = posix_spawnp(&pid_, path.c_str(), &fa, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    ::close(fds[1]);
    if (rc != 0) {
      ::close(fds[0]);
      throw SolverError("cannot start solver '" + path + "': " + std::strerror(rc));
    }
    fd_ = fds[0];
  }

  SmtProcess(const SmtProcess&) = delete;
  SmtProcess& operator=(const SmtProcess&) = delete;

  ~SmtProcess() {
    if (fd_ >= 0) ::close(fd_);
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      int status = 0;
      while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
      }
    }
  }

  void send(const std::string& text) {
    std::size_t off = 0;
    while (off < text.size()) {
      const ssize_t n = ::send(fd_, text.data() + off, text.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw SolverError(std::string("writing to solver: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  /// Next line, or nullopt once the deadline passes.
  std::optional<std::string> read_line(Clock::time_point deadline) {
    for (;;) {
      if (auto nl = buf_.find('\n'); nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
      if (left <= 0) return std::nullopt;
      pollfd p{fd_, POLLIN, 0};
      const int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(left, 1000)));
      if (rc < 0 && errno != EINTR) throw SolverError(std::string("poll: ") + std::strerror(errno));
      if (rc <= 0) continue;
      char chunk[4096];
      const ssize_t n = ::read(fd_, chunk, sizeof chunk);
      if (n == 0) throw SolverError("solver process exited unexpectedly");
      if (n < 0) {
        if (errno == EINTR) continue;
        throw SolverError(std::string("reading from solver: ") + std::strerror(errno));
      }
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  pid_t pid_ = -1;
  int fd_ = -1;
  std::string buf_;
};

struct SExp {
  bool is_list = false;
  std::string atom;
  std::vector<SExp> items;
};

class SExpReader {
 public:
  explicit SExpReader(const std::string& text) : t_(text) {}

  SExp read() {
    skip();
    if (i_ >= t_.size()) throw SolverError("truncated solver output");
    SExp e;
    if (t_[i_] == '(') {
      ++i_;
      e.is_list = true;
      for (;;) {
        skip();
        if (i_ >= t_.size()) throw SolverError("unbalanced solver output");
        if (t_[i_] == ')') {
          ++i_;
          break;
        }
        e.items.push_back(read());
      }
    } else if (t_[i_] == '|') {
      const std::size_t end = t_.find('|', i_ + 1);
      if (end == std::string::npos) throw SolverError("unterminated quoted symbol in solver output");
      e.atom = t_.substr(i_ + 1, end - i_ - 1);
      i_ = end + 1;
    } else {
      const std::size_t start = i_;
      while (i_ < t_.size() && !std::isspace(static_cast<unsigned char>(t_[i_])) && t_[i_] != '(' && t_[i_] != ')') ++i_;
      e.atom = t_.substr(start, i_ - start);
    }
    return e;
  }

 private:
  void skip() {
    while (i_ < t_.size() && std::isspace(static_cast<unsigned char>(t_[i_]))) ++i_;
  }
  const std::string& t_;
  std::size_t i_ = 0;
};

std::uint64_t parse_value(const SExp& v) {
  try {
    if (!v.is_list && v.atom.rfind("#x", 0) == 0) return std::stoull(v.atom.substr(2), nullptr, 16);
    if (!v.is_list && v.atom.rfind("#b", 0) == 0) return std::stoull(v.atom.substr(2), nullptr, 2);
    if (v.is_list && v.items.size() == 3 && v.items[0].atom == "_" && v.items[1].atom.rfind("bv", 0) == 0) {
      return std::stoull(v.items[1].atom.substr(2));
    }
  } catch (const std::exception&) {
  }
  throw SolverError("unrecognized value in solver model");
}

// Paren depth outside quoted symbols; complete when it returns to zero.
int paren_delta(const std::string& line, bool& in_quote) {
  int d = 0;
  for (char c : line) {
    if (c == '|') in_quote = !in_quote;
    if (in_quote) continue;
    if (c == '(') ++d;
    if (c == ')') --d;
  }
  return d;
}

class SmtSession final : public Session {
 public:
  explicit SmtSession(const SolverConfig& cfg) : cfg_(cfg) {
    if (cfg_.incremental) start();
  }

 protected:
  void do_push() override {
    if (!cfg_.incremental) return;
    ensure();
    proc_->send("(push 1)\n");
  }
  void do_pop() override {
    if (!cfg_.incremental) return;
    ensure();
    proc_->send("(pop 1)\n");
  }
  void do_declare(const VarInfo& v) override {
    if (!cfg_.incremental) return;
    if (!ensure()) proc_->send(declaration(v));
  }
  void do_add(const Expr& a) override {
    if (!cfg_.incremental) return;
    if (!ensure()) proc_->send(assertion(a));
  }

  CheckResult do_check() override {
    if (!cfg_.incremental) {
      proc_.reset();
      start();
      replay(false);
    } else {
      ensure();
    }
    CheckResult r;
    const auto budget = std::chrono::duration<double>(cfg_.timeout_seconds * 1.1 + 1.0);
    const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(budget);
    proc_->send(check_command() + "\n");
    std::optional<std::string> status;
    for (;;) {
      status = proc_->read_line(deadline);
      if (!status) break;
      if (status->empty()) continue;
      if (status->rfind("(error", 0) == 0) throw SolverError("solver reported " + *status);
      if (*status == "sat" || *status == "unsat" || *status == "unknown" || *status == "timeout") break;
    }
    if (!status) {
      // Hard watchdog: the solver ignored its own timeout.
      proc_.reset();
      r.status = SatStatus::Unknown;
      return r;
    }
    if (*status == "unsat") {
      r.status = SatStatus::Unsat;
    } else if (*status != "sat") {
      r.status = SatStatus::Unknown;
    } else {
      r.status = SatStatus::Sat;
      r.model = read_model(deadline);
    }
    if (!cfg_.incremental) proc_.reset();
    return r;
  }

 private:
  std::string check_command() const {
    if (!cfg_.check_command.empty()) return cfg_.check_command;
    const auto slash = cfg_.solver_path.find_last_of('/');
    const std::string base = slash == std::string::npos ? cfg_.solver_path : cfg_.solver_path.substr(slash + 1);
    // z3 drops to its slower SMT core once push/pop is used; bit-blast instead.
    if (base.rfind("z3", 0) == 0) return "(check-sat-using (then simplify solve-eqs bit-blast sat))";
    return "(check-sat)";
  }

  void start() {
    proc_ = std::make_unique<SmtProcess>(cfg_.solver_path, cfg_.solver_args);
    const auto ms = static_cast<long long>(cfg_.timeout_seconds * 1000.0);
    proc_->send("(set-option :print-success false)\n(set-option :produce-models true)\n(set-option :timeout " +
                std::to_string(std::max(1LL, ms)) + ")\n(set-logic QF_BV)\n");
  }

  // Restarts a killed process and replays the assertion stack. Returns true
  // when a replay happened (the latest declaration or assertion is included).
  bool ensure() {
    if (proc_) return false;
    start();
    replay(true);
    return true;
  }

  void replay(bool with_frames) {
    std::string script;
    for (std::size_t i = 0; i < frames_.size(); ++i) {
      if (i > 0 && with_frames) script += "(push 1)\n";
      for (const auto& v : frames_[i].vars) script += declaration(v);
      for (const auto& a : frames_[i].assertions) script += assertion(a);
    }
    proc_->send(script);
  }

  static std::string declaration(const VarInfo& v) {
    return "(declare-const |" + v.name + "| (_ BitVec " + std::to_string(v.width) + "))\n";
  }
  static std::string assertion(const Expr& a) { return "(assert (= " + to_smtlib(a) + " #b1))\n"; }

  Model read_model(Clock::time_point deadline) {
    Model m;
    const auto vs = declared();
    if (vs.empty()) return m;
    std::string req = "(get-value (";
    for (const auto& v : vs) req += "|" + v.name + "| ";
    req += "))\n";
    proc_->send(req);

    std::string text;
    int depth = 0;
    bool in_quote = false;
    bool started = false;
    while (!started || depth > 0) {
      auto line = proc_->read_line(deadline);
      if (!line) {
        proc_.reset();
        throw SolverError("solver did not answer get-value in time");
      }
      if (line->empty()) continue;
      if (line->rfind("(error", 0) == 0) throw SolverError("solver reported " + *line);
      started = true;
      depth += paren_delta(*line, in_quote);
      text += *line + "\n";
    }
    const SExp root = SExpReader(text).read();
    std::map<std::string, unsigned> widths;
    for (const auto& v : vs) widths.emplace(v.name, v.width);
    for (const auto& pair : root.items) {
      if (!pair.is_list || pair.items.size() != 2 || pair.items[0].is_list) {
        throw SolverError("malformed get-value response");
      }
      auto w = widths.find(pair.items[0].atom);
      if (w == widths.end()) throw SolverError("solver returned unknown symbol '" + pair.items[0].atom + "'");
      m.insert_or_assign(w->first, BitVector(w->second, parse_value(pair.items[1])));
    }
    return m;
  }

  SolverConfig cfg_;
  std::unique_ptr<SmtProcess> proc_;
};

}  // namespace

std::unique_ptr<Session> make_smt_session(const SolverConfig& cfg) { return std::make_unique<SmtSession>(cfg); }

}  // namespace poirot::solver::detail
