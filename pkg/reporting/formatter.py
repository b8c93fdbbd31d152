"""Summary formatter - renders metric bundles and fairness reports as HTML and plain text."""
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple


class SummaryFormatter:
    """Fill the HTML summary template from a stage's metrics."""

    def __init__(self, template_path: Path = None):
        template_path = template_path or Path(__file__).parent.parent / 'prompts' / 'summary_template.html'
        with open(template_path, 'r', encoding='utf-8') as f:
            self.template = f.read()

    def format_evaluation(self, metrics: Dict[str, Any], run_id: str, seed: int) -> Tuple[str, str]:
        """
        Format an evaluation bundle.

        Args:
            metrics: The evaluate stage's metrics bundle
            run_id: Run identifier
            seed: Experiment seed

        Returns:
            Tuple of (html_body, plain_body)
        """
        sections = []
        retrieval = metrics.get('retrieval', {})
        sections.append(self._table('Retrieval', ['metric', 'value'],
                                    [[k, self._num(v)] for k, v in retrieval.items()]))
        diagnosis = metrics.get('diagnosis', {})
        per_class = diagnosis.get('per_class', {})
        sections.append(self._table(f"Diagnosis (mAUC {self._num(diagnosis.get('mauc'))})", ['class', 'AUROC'],
                                    [[k, self._num(v)] for k, v in per_class.items()]))
        for key, title in (('acuity', 'Acuity'), ('age', 'Age'), ('referral', 'Referral')):
            if key in metrics:
                rows = [[k, self._num(v)] for k, v in metrics[key].items() if not isinstance(v, (dict, list))]
                sections.append(self._table(title, ['metric', 'value'], rows))

        mauc = diagnosis.get('mauc')
        ok = mauc is not None and mauc == mauc and mauc >= 0.5
        html = self._render('Evaluation summary', run_id, seed, sections, ok,
                            f"Mean diagnosis AUROC {self._num(mauc)}; top-1 retrieval "
                            f"{self._num(retrieval.get('top1'))}")
        return html, self.format_plain('Evaluation summary', metrics)

    def format_fairness(self, report: Dict[str, Any], run_id: str, seed: int) -> Tuple[str, str]:
        flagged = report.get('flagged', [])
        rows = [[r['subgroup'], r['class_name'], self._num(r['tpr_disparity']), self._num(r.get('p_adjusted'))]
                for r in report.get('disparities', []) + report.get('intersectional', [])
                if r.get('tpr_disparity') is not None]
        sections = [
            self._table('TPR disparity', ['subgroup', 'class', 'disparity', 'adjusted p'], rows,
                        flag_column=2, flag_above=report.get('threshold', 0.1)),
            self._table('Long-turnaround exposure odds ratios', ['exposure', 'OR', 'p'],
                        [[e['exposure'], self._num(e['odds_ratio']), self._num(e['p_value'])]
                         for e in report.get('exposures', [])]),
        ]
        html = self._render('Fairness audit', run_id, seed, sections, not flagged,
                            f'{len(flagged)} (class, subgroup) pairs exceed the '
                            f"{report.get('threshold', 0.1)} disparity threshold")
        return html, self.format_plain('Fairness audit', {'flagged': flagged})

    def format_plain(self, title: str, payload: Dict[str, Any]) -> str:
        body = f'{title}\n\n'
        for key, value in payload.items():
            body += f'{key}: {value}\n'
        return body

    def _render(self, title: str, run_id: str, seed: int, sections: List[str], ok: bool, message: str) -> str:
        replacements = {
            '{{title}}': self._escape_html(title),
            '{{run_id}}': self._escape_html(run_id),
            '{{seed}}': str(seed),
            '{{timestamp}}': datetime.now().strftime('%Y-%m-%d %H:%M:%S'),
            '{{status_color}}': '#e8f5e9' if ok else '#ffebee',
            '{{status_border}}': '#4caf50' if ok else '#f44336',
            '{{status_message}}': self._escape_html(message),
            '{{sections}}': '\n'.join(sections),
        }
        html = self.template
        for placeholder, value in replacements.items():
            html = html.replace(placeholder, value)
        return html

    def _table(self, title: str, header: Sequence[str], rows: Sequence[Sequence[str]], flag_column: int = None,
               flag_above: float = None) -> str:
        head = ''.join(f'<th>{self._escape_html(h)}</th>' for h in header)
        body = []
        for row in rows:
            cells = []
            for i, cell in enumerate(row):
                flagged = (flag_column == i and flag_above is not None and self._abs(cell) > flag_above)
                css = ' class="flag"' if flagged else ''
                cells.append(f'<td{css}>{self._escape_html(str(cell))}</td>')
            body.append(f"<tr>{''.join(cells)}</tr>")
        return f"<h2>{self._escape_html(title)}</h2><table><tr>{head}</tr>{''.join(body)}</table>"

    @staticmethod
    def _num(value) -> str:
        if value is None:
            return 'n/a'
        try:
            return f'{float(value):.3f}'
        except (TypeError, ValueError):
            return str(value)

    @staticmethod
    def _abs(cell) -> float:
        try:
            return abs(float(cell))
        except (TypeError, ValueError):
            return 0.0

    def _escape_html(self, text: str) -> str:
        """Escape HTML special characters."""
        return (text
                .replace('&', '&amp;')
                .replace('<', '&lt;')
                .replace('>', '&gt;')
                .replace('"', '&quot;')
                .replace("'", '&#39;'))

    def write(self, out_dir: Path, stem: str, html: str, plain: str) -> List[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        html_path, text_path = out_dir / f'{stem}.html', out_dir / f'{stem}.txt'
        html_path.write_text(html, encoding='utf-8')
        text_path.write_text(plain, encoding='utf-8')
        return [html_path, text_path]
