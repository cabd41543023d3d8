#pragma once

#include <coroutine>
#include <exception>
#include <optional>
#include <utility>

namespace dmkv {

// Root coroutine of an actor. Created suspended; the scheduler starts it and
// later resumes it through handles captured by awaiters. The frame lives
// until the Task is destroyed, so crashed actors simply never run again.
struct Task {
  struct promise_type {
    Task get_return_object() {
      return Task{std::coroutine_handle<promise_type>::from_promise(*this)};
    }
    std::suspend_always initial_suspend() noexcept { return {}; }
    std::suspend_always final_suspend() noexcept { return {}; }
    void return_void() {}
    void unhandled_exception() { std::terminate(); }
  };

  using Handle = std::coroutine_handle<promise_type>;

  Task() = default;
  explicit Task(Handle h) : h_(h) {}
  Task(Task&& o) noexcept : h_(std::exchange(o.h_, {})) {}
  Task& operator=(Task&& o) noexcept {
    if (this != &o) {
      if (h_) h_.destroy();
      h_ = std::exchange(o.h_, {});
    }
    return *this;
  }
  Task(const Task&) = delete;
  Task& operator=(const Task&) = delete;
  ~Task() {
    if (h_) h_.destroy();
  }

  void start() { h_.resume(); }
  bool done() const { return !h_ || h_.done(); }

 private:
  Handle h_;
};

// Awaitable subroutine with symmetric transfer back to the awaiter. The
// child handle is owned by the Co object (which lives in the parent frame),
// so destroying a suspended parent tears down the whole chain.
template <typename T>
struct Co {
  struct promise_type {
    std::optional<T> value;
    std::coroutine_handle<> cont;

    Co get_return_object() {
      return Co{std::coroutine_handle<promise_type>::from_promise(*this)};
    }
    std::suspend_always initial_suspend() noexcept { return {}; }
    auto final_suspend() noexcept {
      struct Fin {
        bool await_ready() noexcept { return false; }
        std::coroutine_handle<> await_suspend(
            std::coroutine_handle<promise_type> h) noexcept {
          auto c = h.promise().cont;
          return c ? c : std::noop_coroutine();
        }
        void await_resume() noexcept {}
      };
      return Fin{};
    }
    void return_value(T v) { value = std::move(v); }
    void unhandled_exception() { std::terminate(); }
  };

  using Handle = std::coroutine_handle<promise_type>;

  explicit Co(Handle h) : h_(h) {}
  Co(Co&& o) noexcept : h_(std::exchange(o.h_, {})) {}
  Co(const Co&) = delete;
  ~Co() {
    if (h_) h_.destroy();
  }

  bool await_ready() { return false; }
  std::coroutine_handle<> await_suspend(std::coroutine_handle<> c) {
    h_.promise().cont = c;
    return h_;  // start the child
  }
  T await_resume() { return std::move(*h_.promise().value); }

 private:
  Handle h_;
};

template <>
struct Co<void> {
  struct promise_type {
    std::coroutine_handle<> cont;

    Co get_return_object() {
      return Co{std::coroutine_handle<promise_type>::from_promise(*this)};
    }
    std::suspend_always initial_suspend() noexcept { return {}; }
    auto final_suspend() noexcept {
      struct Fin {
        bool await_ready() noexcept { return false; }
        std::coroutine_handle<> await_suspend(
            std::coroutine_handle<promise_type> h) noexcept {
          auto c = h.promise().cont;
          return c ? c : std::noop_coroutine();
        }
        void await_resume() noexcept {}
      };
      return Fin{};
    }
    void return_void() {}
    void unhandled_exception() { std::terminate(); }
  };

  using Handle = std::coroutine_handle<promise_type>;

  explicit Co(Handle h) : h_(h) {}
  Co(Co&& o) noexcept : h_(std::exchange(o.h_, {})) {}
  Co(const Co&) = delete;
  ~Co() {
    if (h_) h_.destroy();
  }

  bool await_ready() { return false; }
  std::coroutine_handle<> await_suspend(std::coroutine_handle<> c) {
    h_.promise().cont = c;
    return h_;
  }
  void await_resume() {}

 private:
  Handle h_;
};

}  // namespace dmkv
