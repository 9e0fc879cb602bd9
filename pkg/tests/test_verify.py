from cayleyflat import model, verify


def test_all_checks_pass():
    checks = verify.run_all()
    assert len(checks) >= 12
    failed = [(c.name, c.measured, c.tolerance, c.detail) for c in checks if not c.passed]
    assert not failed


def test_gradient_mutation_is_caught(monkeypatch):
    real = model.grad

    def broken(theta, t, omega, lam):
        g = real(theta, t, omega, lam)
        g.A[0, 0, 0] += 1e-3
        return g

    monkeypatch.setattr(model, "grad", broken)
    assert not verify.check_fd_gradient().passed


def test_flatness_mutation_is_caught(monkeypatch):
    real = model.flatness
    monkeypatch.setattr(model, "flatness", lambda theta, omega: 1.001 * real(theta, omega))
    assert not verify.check_fd_hessian_trace().passed
