"""
Alarm notification for the online detector.
Posts alarms to a Telegram chat when credentials are configured.
"""

import logging

import requests
from django.conf import settings

logger = logging.getLogger(__name__)


class AlarmNotifier:
    """Posts alarms to one Telegram chat; every failure is logged and dropped."""

    SEND_URL = 'https://api.telegram.org/bot{token}/sendMessage'

    def __init__(self, token=None, chat_id=None):
        self.token = settings.TELEGRAM_BOT_TOKEN if token is None else token
        self.chat_id = settings.TELEGRAM_CHAT_ID if chat_id is None else chat_id

    def is_enabled(self):
        return bool(self.token and self.chat_id)

    def send_message(self, text):
        payload = {'chat_id': self.chat_id, 'text': text, 'parse_mode': 'HTML'}
        try:
            reply = requests.post(self.SEND_URL.format(token=self.token), json=payload, timeout=10).json()
        except (requests.RequestException, ValueError) as exc:
            logger.error(f'alarm not delivered: {exc}')
            return None
        if not reply.get('ok'):
            logger.error(f'alarm rejected by Telegram: {reply.get("description")}')
            return None
        return reply.get('result')

    def notify_alarm(self, alarm, source=None):
        if not self.is_enabled():
            return None
        return self.send_message(get_alarm_message(alarm, source))


def get_alarm_message(alarm, source=None):
    """
    Generate formatted alarm message for Telegram.
    """
    lines = [
        '<b>Abnormal pattern detected</b>',
        '',
        f'Index: {alarm.index}',
        f'Value: {alarm.value:.6g}',
        f'Change rate: {alarm.rate:+.4%}',
        f'Posterior: {alarm.posterior:.6f}',
    ]
    if source:
        lines.insert(1, f'Source: {source}')
    return '\n'.join(lines)
