from typing import Protocol, Any, Dict, Optional
from rich.progress import Progress, TaskID


class ProgressReporter(Protocol):
    """Progress sink for corpus generation, training and evaluation loops.

    `status` is a short trailing note such as the last epoch's loss.
    """
    def add_task(self, description: str, total: float) -> Any:
        ...

    def update_task(self, task_id: Any, advance: float = 0.0, completed: Optional[float] = None,
                    status: Optional[str] = None) -> None:
        ...

    def remove_task(self, task_id: Any) -> None:
        ...


class RichProgressReporter:
    def __init__(self, prog: Progress):
        self.prog = prog

    def add_task(self, description: str, total: float) -> TaskID:
        return self.prog.add_task(description, total=total, status="")

    def update_task(self, task_id: TaskID, advance: float = 0.0, completed: Optional[float] = None,
                    status: Optional[str] = None) -> None:
        kwargs: Dict[str, Any] = {}
        if advance > 0:
            kwargs['advance'] = advance
        if completed is not None:
            kwargs['completed'] = completed
        if status is not None:
            kwargs['status'] = status
        self.prog.update(task_id, **kwargs)

    def remove_task(self, task_id: TaskID) -> None:
        self.prog.remove_task(task_id)


class NullProgressReporter:
    """Keeps the last status per task and draws nothing."""
    def __init__(self):
        self.statuses: Dict[int, str] = {}
        self._next = 0

    def add_task(self, description: str, total: float) -> int:
        self._next += 1
        self.statuses[self._next] = ""
        return self._next

    def update_task(self, task_id: Any, advance: float = 0.0, completed: Optional[float] = None,
                    status: Optional[str] = None) -> None:
        if status is not None:
            self.statuses[task_id] = status

    def remove_task(self, task_id: Any) -> None:
        pass
